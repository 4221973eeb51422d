//! Scenario files: what nodes exist, how the network behaves, what churns
//! and partitions, and which tasks arrive when.

mod generate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cognition::DEFAULT_EPSILON;
use crate::model::{
    validate_profile, validate_task, Battery, CapabilityAdvertisement, DataSourceId, DynamicStatus, NodeId,
    NodeProfile, Position, StaticHardwareProfile, StaticSoftwareProfile, TaskSpec, Violation,
};
use crate::scheduler::{SchedulerParams, Weights};
use crate::sim::{ChurnSchedule, NetModel};

pub use generate::{data_locality, heavy_churn, partition_heal, self_healing, steady_state, ChurnShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    pub position: Position,
    pub battery: Battery,
    /// Fraction of charge lost per second; ignored for mains nodes.
    #[serde(default)]
    pub drain_rate: f64,
    pub hw: StaticHardwareProfile,
    pub sw: StaticSoftwareProfile,
    #[serde(default)]
    pub typologies: BTreeSet<String>,
    /// Share of the CPU taken by the device's own primary functions.
    #[serde(default)]
    pub background_load: f64,
    /// Whether the node is up at time zero.
    #[serde(default = "yes")]
    pub start: bool,
}

fn yes() -> bool {
    true
}

impl NodeConfig {
    /// The profile the node boots with. Initial data holdings come from
    /// the scenario's data sources.
    pub fn profile(&self, holdings: BTreeSet<DataSourceId>) -> NodeProfile {
        NodeProfile {
            node: self.id,
            hw: self.hw.clone(),
            sw: self.sw.clone(),
            status: DynamicStatus {
                utilization: self.background_load,
                battery: self.battery,
                battery_drain_rate: if self.battery.is_mains() { 0.0 } else { self.drain_rate },
                position: self.position,
                scheduled_task_ids: Vec::new(),
                status_version: 0,
            },
            adv: CapabilityAdvertisement {
                node: self.id,
                task_typologies: self.typologies.clone(),
                data_sources: holdings,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSourceConfig {
    pub id: DataSourceId,
    pub owner: NodeId,
    /// MiB.
    pub size: f64,
    /// Nodes other than the owner holding a copy from the start.
    #[serde(default)]
    pub replicas: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub group_a: BTreeSet<NodeId>,
    pub group_b: BTreeSet<NodeId>,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arrival {
    pub time: f64,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationRequest {
    pub time: f64,
    pub node: NodeId,
    pub source: DataSourceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Move {
    pub time: f64,
    pub node: NodeId,
    pub to: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    /// Seconds of simulated time.
    pub duration: f64,
    #[serde(default)]
    pub net: NetModel,
    #[serde(default)]
    pub scheduler: SchedulerParams,
    #[serde(default)]
    pub predictor: PredictorConfig,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub data_sources: Vec<DataSourceConfig>,
    #[serde(default)]
    pub churn: ChurnSchedule,
    #[serde(default)]
    pub partitions: Vec<PartitionConfig>,
    #[serde(default)]
    pub workload: Vec<Arrival>,
    #[serde(default)]
    pub replications: Vec<ReplicationRequest>,
    #[serde(default)]
    pub moves: Vec<Move>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n{}", list(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Serialize(#[from] toml::ser::Error),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

fn nested(prefix: &str, v: Violation) -> Violation {
    let rest = v.message.strip_prefix(&v.path).unwrap_or(&v.message).trim_start();
    Violation::new(&format!("{prefix}.{}", v.path), rest)
}

impl ScenarioConfig {
    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    /// Parses and validates.
    pub fn load(text: &str) -> Result<Self, ScenarioError> {
        let cfg = Self::from_toml(text)?;
        let errors = cfg.validate();
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    /// Initial holdings per node: owners plus listed replicas.
    pub fn holdings(&self) -> BTreeMap<NodeId, BTreeSet<DataSourceId>> {
        let mut out: BTreeMap<NodeId, BTreeSet<DataSourceId>> = BTreeMap::new();
        for d in &self.data_sources {
            out.entry(d.owner).or_default().insert(d.id);
            for r in &d.replicas {
                out.entry(*r).or_default().insert(d.id);
            }
        }
        out
    }

    /// Time of the last scheduled churn event, without jitter.
    pub fn churn_end(&self) -> Option<f64> {
        self.churn.events.iter().map(|e| e.time).max_by(f64::total_cmp)
    }

    /// Every static violation; empty when the scenario is runnable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let bad = |out: &mut Vec<Violation>, path: String, msg: &str| out.push(Violation::new(&path, msg));

        if !(self.duration.is_finite() && self.duration > 0.0) {
            bad(&mut out, "duration".into(), "not positive");
        }
        for m in self.net.validate() {
            let (path, msg) = m.split_once(' ').unwrap_or((m.as_str(), ""));
            bad(&mut out, path.to_owned(), msg);
        }
        if self.net.expected_rtt() <= 0.0 {
            bad(&mut out, "net".into(), "expected round trip must be positive");
        }
        let w = self.scheduler.weights;
        if Weights::new(w.availability, w.qos, w.locality).is_err() {
            bad(
                &mut out,
                "scheduler.weights".into(),
                "must be non-negative with a positive sum",
            );
        }
        if self.scheduler.k == 0 {
            bad(&mut out, "scheduler.k".into(), "below 1");
        }
        if self.scheduler.max_attempts == 0 {
            bad(&mut out, "scheduler.max_attempts".into(), "below 1");
        }
        if !(self.scheduler.locality_scale.is_finite() && self.scheduler.locality_scale > 0.0) {
            bad(&mut out, "scheduler.locality_scale".into(), "not positive");
        }
        if !(self.predictor.alpha > 0.0 && self.predictor.alpha <= 1.0) {
            bad(&mut out, "predictor.alpha".into(), "out of (0,1]");
        }
        if !(self.predictor.epsilon > 0.0 && self.predictor.epsilon < 1.0) {
            bad(&mut out, "predictor.epsilon".into(), "out of (0,1)");
        }

        let mut ids = BTreeSet::new();
        let holdings = self.holdings();
        for (i, n) in self.nodes.iter().enumerate() {
            let p = format!("nodes[{i}]");
            if !ids.insert(n.id) {
                bad(&mut out, format!("{p}.id"), "duplicate");
            }
            let profile = n.profile(holdings.get(&n.id).cloned().unwrap_or_default());
            for v in validate_profile(&profile) {
                out.push(nested(&p, v));
            }
            if !(n.drain_rate.is_finite() && n.drain_rate >= 0.0) {
                bad(&mut out, format!("{p}.drain_rate"), "negative or not finite");
            }
            if !(0.0..=1.0).contains(&n.background_load) {
                bad(&mut out, format!("{p}.background_load"), "out of [0,1]");
            }
        }
        let known = |id: &NodeId| ids.contains(id);

        let mut sources = BTreeSet::new();
        for (i, d) in self.data_sources.iter().enumerate() {
            let p = format!("data_sources[{i}]");
            if !sources.insert(d.id) {
                bad(&mut out, format!("{p}.id"), "duplicate");
            }
            if !known(&d.owner) {
                bad(&mut out, format!("{p}.owner"), &format!("unknown node {}", d.owner));
            }
            if !(d.size.is_finite() && d.size > 0.0) {
                bad(&mut out, format!("{p}.size"), "not positive");
            }
            for r in d.replicas.iter().filter(|r| !known(r)) {
                bad(&mut out, format!("{p}.replicas"), &format!("unknown node {r}"));
            }
        }

        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.churn.events.iter().enumerate() {
            let p = format!("churn.events[{i}]");
            if !known(&e.node) {
                bad(&mut out, format!("{p}.node"), &format!("unknown node {}", e.node));
            }
            if !(e.time.is_finite() && e.time >= 0.0) {
                bad(&mut out, format!("{p}.time"), "negative or not finite");
            } else if e.time < last {
                bad(&mut out, format!("{p}.time"), "not sorted");
            }
            last = last.max(e.time);
            if e.time > self.duration {
                bad(&mut out, format!("{p}.time"), "after duration");
            }
        }
        if !(self.churn.jitter.is_finite() && self.churn.jitter >= 0.0) {
            bad(&mut out, "churn.jitter".into(), "negative or not finite");
        }

        for (i, w) in self.partitions.iter().enumerate() {
            let p = format!("partitions[{i}]");
            if !(w.start.is_finite() && w.end.is_finite() && w.start >= 0.0 && w.start < w.end) {
                bad(&mut out, p.clone(), "needs 0 <= start < end");
            }
            if let Some(n) = w.group_a.intersection(&w.group_b).next() {
                bad(&mut out, p.clone(), &format!("groups overlap at node {n}"));
            }
            for n in w.group_a.iter().chain(&w.group_b).filter(|n| !known(n)) {
                bad(&mut out, p.clone(), &format!("unknown node {n}"));
            }
        }

        let mut tasks = BTreeSet::new();
        for (i, a) in self.workload.iter().enumerate() {
            let p = format!("workload[{i}]");
            if !(a.time.is_finite() && a.time >= 0.0) {
                bad(&mut out, format!("{p}.time"), "negative or not finite");
            }
            if a.time > self.duration {
                bad(&mut out, format!("{p}.time"), "after duration");
            }
            if !tasks.insert(a.task.task_id) {
                bad(&mut out, format!("{p}.task.task_id"), "duplicate");
            }
            if !known(&a.task.origin_node) {
                bad(
                    &mut out,
                    format!("{p}.task.origin_node"),
                    &format!("unknown node {}", a.task.origin_node),
                );
            }
            if a.task.qos.min_success_replicas > 1 {
                bad(
                    &mut out,
                    format!("{p}.task.qos.min_success_replicas"),
                    "above 1 is not supported",
                );
            }
            for v in validate_task(&a.task) {
                out.push(nested(&format!("{p}.task"), v));
            }
            for (j, input) in a.task.input_data.iter().enumerate() {
                if !sources.contains(&input.source) {
                    bad(
                        &mut out,
                        format!("{p}.task.input_data[{j}].source"),
                        &format!("unknown data source {}", input.source),
                    );
                }
            }
        }

        for (i, r) in self.replications.iter().enumerate() {
            let p = format!("replications[{i}]");
            if !known(&r.node) {
                bad(&mut out, format!("{p}.node"), &format!("unknown node {}", r.node));
            }
            if !sources.contains(&r.source) {
                bad(
                    &mut out,
                    format!("{p}.source"),
                    &format!("unknown data source {}", r.source),
                );
            }
            if !(r.time.is_finite() && (0.0..=self.duration).contains(&r.time)) {
                bad(&mut out, format!("{p}.time"), "outside [0, duration]");
            }
        }
        for (i, m) in self.moves.iter().enumerate() {
            let p = format!("moves[{i}]");
            if !known(&m.node) {
                bad(&mut out, format!("{p}.node"), &format!("unknown node {}", m.node));
            }
            if !m.to.is_finite() {
                bad(&mut out, format!("{p}.to"), "not finite");
            }
            if !(m.time.is_finite() && (0.0..=self.duration).contains(&m.time)) {
                bad(&mut out, format!("{p}.time"), "outside [0, duration]");
            }
        }
        out
    }
}

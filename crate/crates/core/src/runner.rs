//! Drives a scenario through the simulator and turns the outcome into a
//! [`MetricsReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::agent::{Agent, AgentConfig, Input, NodeSpec, Note};
use crate::dataplane::DataAnnouncement;
use crate::membership::SwarmId;
use crate::metrics::{mean, percentile, MetricsReport};
use crate::model::{NodeId, TaskId, Violation};
use crate::scenario::ScenarioConfig;
use crate::scheduler::{SchedulerParams, Weights};
use crate::sim::{Lifecycle, MessageCounters, NodeSetup, Sent, SimConfig, SimError, Simulation, Trace};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Cluster-wide state observed once per probe period.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub up: BTreeSet<NodeId>,
    /// Every up node's Alive set equals the set of up nodes.
    pub members_agree: bool,
    /// Every up node computes the same hash over its live registry entries.
    pub registries_agree: bool,
    pub swarm_ids: BTreeSet<SwarmId>,
    pub utilization: BTreeMap<NodeId, f64>,
}

#[derive(Debug, Clone, Default)]
struct TaskBook {
    submitted: BTreeMap<TaskId, Pending>,
    done: BTreeMap<TaskId, Finished>,
    failed: BTreeSet<TaskId>,
    lost: BTreeSet<TaskId>,
    replacements: u64,
    speculative: u64,
    local: u64,
    offloaded: u64,
    replications: (u64, u64, u64),
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    origin: NodeId,
    deadline_at: f64,
}

#[derive(Debug, Clone, Copy)]
struct Finished {
    latency: f64,
    transfer: f64,
    late: bool,
}

impl TaskBook {
    fn unresolved(&self, task: &TaskId) -> bool {
        !self.done.contains_key(task) && !self.failed.contains(task) && !self.lost.contains(task)
    }

    fn note(&mut self, t: f64, note: &Note) {
        match note {
            Note::Submitted { task, deadline_at } => {
                // origin id is filled in by the caller
                self.submitted.insert(
                    *task,
                    Pending {
                        origin: NodeId(u64::MAX),
                        deadline_at: *deadline_at,
                    },
                );
            }
            Note::Completed {
                task,
                submitted_at,
                deadline_at,
                transfer_time,
                ..
            } => {
                self.done.insert(
                    *task,
                    Finished {
                        latency: t - submitted_at,
                        transfer: *transfer_time,
                        late: t > *deadline_at,
                    },
                );
            }
            Note::FailedPermanent { task, .. } => {
                self.failed.insert(*task);
            }
            Note::Replaced { .. } => self.replacements += 1,
            Note::Speculative { .. } => self.speculative += 1,
            Note::Placement(p) => {
                if p.selected.len() == 1 && p.self_check.feasible(p.deadline) {
                    self.local += 1;
                } else if !p.selected.is_empty() {
                    self.offloaded += 1;
                }
            }
            Note::ReplicationDone { .. } => self.replications.0 += 1,
            Note::ReplicationAborted { .. } => self.replications.1 += 1,
            Note::ReplicationFailed { .. } => self.replications.2 += 1,
            _ => {}
        }
    }

    fn origin_down(&mut self, node: NodeId) {
        let lost: Vec<TaskId> = self
            .submitted
            .iter()
            .filter(|(id, p)| p.origin == node && self.unresolved(id))
            .map(|(id, _)| *id)
            .collect();
        self.lost.extend(lost);
    }
}

pub struct RunResult {
    pub metrics: MetricsReport,
    pub notes: Vec<(f64, NodeId, Note)>,
    pub lifecycle: Vec<Lifecycle>,
    pub samples: Vec<Sample>,
    pub counters: MessageCounters,
    /// Sent messages, if the tap was turned on.
    pub sent: Vec<Sent>,
    pub trace: Trace,
}

/// The agent configuration a scenario implies.
pub fn agent_config(cfg: &ScenarioConfig) -> AgentConfig {
    let w = cfg.scheduler.weights;
    let weights = Weights::new(w.availability, w.qos, w.locality).unwrap_or_default();
    let scheduler = SchedulerParams {
        weights,
        ..cfg.scheduler
    };
    AgentConfig::new(cfg.net.clone(), scheduler, cfg.predictor.alpha, cfg.predictor.epsilon)
}

/// A scenario loaded into a simulator, advanced in probe-period steps.
pub struct Run {
    cfg: ScenarioConfig,
    sim: Simulation<Agent>,
    sample_period: f64,
    next_sample: f64,
    samples: Vec<Sample>,
    notes: Vec<(f64, NodeId, Note)>,
    lifecycle: Vec<Lifecycle>,
    book: TaskBook,
}

impl Run {
    pub fn new(cfg: &ScenarioConfig, trace: Trace) -> Result<Self, RunError> {
        let errors = cfg.validate();
        if !errors.is_empty() {
            return Err(RunError::Invalid(errors));
        }
        let agent_cfg = Arc::new(agent_config(cfg));
        let holdings = cfg.holdings();
        let specs: BTreeMap<NodeId, NodeSpec> = cfg
            .nodes
            .iter()
            .map(|n| {
                let owned = cfg
                    .data_sources
                    .iter()
                    .filter(|d| d.owner == n.id)
                    .map(|d| DataAnnouncement {
                        id: d.id,
                        owner: d.owner,
                        size: d.size,
                    })
                    .collect();
                let spec = NodeSpec {
                    profile: n.profile(holdings.get(&n.id).cloned().unwrap_or_default()),
                    owned,
                    background_load: n.background_load,
                };
                (n.id, spec)
            })
            .collect();
        let seed = cfg.seed;
        let sample_period = agent_cfg.membership.probe_period;
        let factory_cfg = Arc::clone(&agent_cfg);
        let factory =
            Box::new(move |id: NodeId, stable| Agent::new(specs[&id].clone(), Arc::clone(&factory_cfg), seed, stable));
        let sim_cfg = SimConfig {
            net: cfg.net.clone(),
            seed,
            battery_tick: 1.0,
        };
        let mut sim = Simulation::new(sim_cfg, trace, factory);
        for n in &cfg.nodes {
            sim.add_node(NodeSetup {
                id: n.id,
                position: n.position,
                battery: n.battery,
                drain_rate: n.drain_rate,
            });
        }
        for n in cfg.nodes.iter().filter(|n| n.start) {
            sim.schedule_join(0.0, n.id)?;
        }
        sim.schedule_churn(&cfg.churn)?;
        for p in &cfg.partitions {
            sim.inject_partition(p.group_a.iter().copied(), p.group_b.iter().copied(), p.start, p.end)?;
        }
        for a in &cfg.workload {
            sim.schedule_input(a.time, a.task.origin_node, Input::Submit(a.task.clone()))?;
        }
        for r in &cfg.replications {
            sim.schedule_input(r.time, r.node, Input::Replicate(r.source))?;
        }
        for m in &cfg.moves {
            sim.schedule_move(m.time, m.node, m.to)?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            sim,
            sample_period,
            next_sample: 0.0,
            samples: Vec::new(),
            notes: Vec::new(),
            lifecycle: Vec::new(),
            book: TaskBook::default(),
        })
    }

    pub fn sim(&self) -> &Simulation<Agent> {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Simulation<Agent> {
        &mut self.sim
    }

    pub fn notes(&self) -> &[(f64, NodeId, Note)] {
        &self.notes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Runs to `t`, sampling at every probe period on the way.
    pub fn advance_to(&mut self, t: f64) -> Result<(), RunError> {
        while self.next_sample <= t {
            let at = self.next_sample;
            self.step(at)?;
            self.sample();
            self.next_sample = at + self.sample_period;
        }
        self.step(t)
    }

    fn step(&mut self, t: f64) -> Result<(), RunError> {
        if let Err(e) = self.sim.run_until(t) {
            self.absorb();
            let _ = self.sim.trace_mut().flush();
            return Err(e.into());
        }
        self.absorb();
        Ok(())
    }

    /// Moves notes and lifecycle events into the books in time order;
    /// notes go first at equal times since they were produced by a
    /// handler that ran before any crash at that instant.
    fn absorb(&mut self) {
        let notes = self.sim.drain_notes();
        let life = self.sim.drain_lifecycle();
        let mut li = life.iter().peekable();
        for (t, node, note) in &notes {
            while let Some(ev) = li.next_if(|ev| lifecycle_time(ev) < *t) {
                self.on_lifecycle(ev);
            }
            self.book.note(*t, note);
            if let Note::Submitted { task, .. } = note {
                self.book.submitted.get_mut(task).expect("just inserted").origin = *node;
            }
        }
        for ev in li {
            self.on_lifecycle(ev);
        }
        self.notes.extend(notes);
        self.lifecycle.extend(life);
    }

    fn on_lifecycle(&mut self, ev: &Lifecycle) {
        match ev {
            Lifecycle::Left { node, .. } | Lifecycle::Crashed { node, .. } => self.book.origin_down(*node),
            Lifecycle::Joined { .. } => {}
        }
    }

    fn sample(&mut self) {
        let up: BTreeSet<NodeId> = self.sim.processes().map(|(id, _)| id).collect();
        let mut members_agree = true;
        let mut hashes = BTreeSet::new();
        let mut swarm_ids = BTreeSet::new();
        let mut utilization = BTreeMap::new();
        for (id, a) in self.sim.processes() {
            if a.membership().view().alive() != up {
                members_agree = false;
            }
            hashes.insert(a.live_registry_hash());
            swarm_ids.insert(a.membership().swarm_id());
            utilization.insert(id, a.executor().utilization());
        }
        self.samples.push(Sample {
            t: self.sim.now(),
            up,
            members_agree,
            registries_agree: hashes.len() <= 1,
            swarm_ids,
            utilization,
        });
    }

    /// Time after which the last disturbance is over: the last churn
    /// event or partition end that actually happened.
    fn quiesced_at(&self) -> f64 {
        let churn = self
            .lifecycle
            .iter()
            .filter(|ev| lifecycle_time(ev) > 0.0)
            .map(lifecycle_time)
            .fold(0.0, f64::max);
        let heal = self
            .cfg
            .partitions
            .iter()
            .map(|p| p.end)
            .filter(|e| *e <= self.cfg.duration)
            .fold(0.0, f64::max);
        churn.max(heal)
    }

    pub fn finish(mut self) -> Result<RunResult, RunError> {
        let end = self.cfg.duration;
        self.advance_to(end)?;
        self.sim.trace_mut().flush().ok();
        let quiet = self.quiesced_at();
        let metrics = self.metrics(quiet);
        let counters = self.sim.counters().clone();
        let Run {
            mut sim,
            notes,
            lifecycle,
            samples,
            ..
        } = self;
        let sent = sim.drain_tap();
        let trace = sim.into_trace();
        Ok(RunResult {
            metrics,
            notes,
            lifecycle,
            samples,
            counters,
            sent,
            trace,
        })
    }

    fn metrics(&self, quiet: f64) -> MetricsReport {
        let b = &self.book;
        let end = self.sim.now();
        let submitted = b.submitted.len() as u64;
        let done = b.done.len() as u64;
        let lost = b.lost.len() as u64;
        let failed = b.failed.len() as u64 + lost;
        let latencies: Vec<f64> = b.done.values().map(|f| f.latency).collect();
        let transfers: Vec<f64> = b.done.values().map(|f| f.transfer).collect();
        let late = b.done.values().filter(|f| f.late).count() as u64;
        let overdue = b
            .submitted
            .iter()
            .filter(|(id, p)| b.unresolved(id) && p.deadline_at < end)
            .count() as u64;
        let c = self.sim.counters();

        let mut per_node: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for s in &self.samples {
            for (n, u) in &s.utilization {
                per_node.entry(*n).or_default().push(*u);
            }
        }
        let node_means: Vec<f64> = per_node.values().map(|v| mean(v)).collect();
        let (splits, merges) = swarm_events(&self.samples);

        MetricsReport {
            tasks_submitted: submitted,
            tasks_done: done,
            tasks_failed_permanent: failed,
            tasks_in_flight: submitted - done - failed,
            tasks_origin_lost: lost,
            tasks_not_submitted: self.cfg.workload.len() as u64 - submitted,
            deadline_violations: late + failed + overdue,
            latency_mean: mean(&latencies),
            latency_p95: percentile(&latencies, 95.0),
            mean_transfer_time: mean(&transfers),
            replacements: b.replacements,
            speculative_attempts: b.speculative,
            failure_rate: if submitted == 0 {
                0.0
            } else {
                (b.replacements + failed) as f64 / submitted as f64
            },
            local_admissions: b.local,
            offloaded_placements: b.offloaded,
            messages_sent: c.sent,
            messages_delivered: c.delivered,
            messages_dropped: c.dropped_total(),
            messages_by_type: c.by_label.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            membership_convergence_time: settled_since(&self.samples, quiet, |s| s.members_agree),
            registry_convergence_time: settled_since(&self.samples, quiet, |s| s.registries_agree),
            swarm_split_events: splits,
            swarm_merge_events: merges,
            utilization_mean: mean(&node_means),
            utilization_min: node_means.iter().copied().reduce(f64::min).unwrap_or(0.0),
            utilization_max: node_means.iter().copied().reduce(f64::max).unwrap_or(0.0),
            replications_done: b.replications.0,
            replications_aborted: b.replications.1,
            replications_failed: b.replications.2,
        }
    }
}

fn lifecycle_time(ev: &Lifecycle) -> f64 {
    match ev {
        Lifecycle::Joined { t, .. } | Lifecycle::Left { t, .. } | Lifecycle::Crashed { t, .. } => *t,
    }
}

/// Changes in the number of distinct swarm ids between consecutive
/// samples, as (splits, merges).
pub fn swarm_events(samples: &[Sample]) -> (u64, u64) {
    let counts: Vec<usize> = samples.iter().map(|s| s.swarm_ids.len()).filter(|n| *n > 0).collect();
    let mut splits = 0;
    let mut merges = 0;
    for w in counts.windows(2) {
        if w[1] > w[0] {
            splits += (w[1] - w[0]) as u64;
        } else {
            merges += (w[0] - w[1]) as u64;
        }
    }
    (splits, merges)
}

/// Seconds from `since` to the first sample after which `pred` held at
/// every later sample; NaN if it fails at the last one.
pub fn settled_since(samples: &[Sample], since: f64, pred: impl Fn(&Sample) -> bool) -> f64 {
    let mut first_good = None;
    for s in samples.iter().filter(|s| s.t >= since) {
        if pred(s) {
            first_good.get_or_insert(s.t);
        } else {
            first_good = None;
        }
    }
    first_good.map(|t| t - since).unwrap_or(f64::NAN)
}

/// Loads, runs to the scenario's duration and reports.
pub fn run(cfg: &ScenarioConfig, trace: Trace) -> Result<RunResult, RunError> {
    Run::new(cfg, trace)?.finish()
}

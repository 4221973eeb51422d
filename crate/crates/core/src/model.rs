//! Shared vocabulary: node identities, positions, profiles, tasks and QoS.
//!
//! All types here are plain values. Profiles and tasks serialize with the
//! field names used throughout the scenario files.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! id_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(
    /// Scenario-unique node identity. The total order is used for every
    /// deterministic tie-break in the system.
    NodeId
);
id_newtype!(TaskId);
id_newtype!(DataSourceId);

/// Point on the 2-D plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Mean of a set of positions, or `None` for an empty set.
pub fn centroid<I: IntoIterator<Item = Position>>(points: I) -> Option<Position> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    (n > 0).then(|| Position::new(sx / n as f64, sy / n as f64))
}

/// Remaining energy of a node. `Mains` marks nodes without a battery
/// constraint (cloud and fixed edge resources).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Battery {
    Mains,
    Level(f64),
}

impl Battery {
    pub fn is_mains(&self) -> bool {
        matches!(self, Battery::Mains)
    }

    /// A battery-constrained node at zero charge cannot do anything.
    pub fn is_depleted(&self) -> bool {
        matches!(self, Battery::Level(l) if *l <= 0.0)
    }

    pub fn level(&self) -> Option<f64> {
        match self {
            Battery::Mains => None,
            Battery::Level(l) => Some(*l),
        }
    }
}

impl Serialize for Battery {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Battery::Mains => s.serialize_str("MAINS"),
            Battery::Level(l) => s.serialize_f64(*l),
        }
    }
}

impl<'de> Deserialize<'de> for Battery {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct BatteryVisitor;

        impl Visitor<'_> for BatteryVisitor {
            type Value = Battery;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a fraction in [0,1] or the string \"MAINS\"")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Battery, E> {
                if v.eq_ignore_ascii_case("mains") {
                    Ok(Battery::Mains)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Battery, E> {
                Ok(Battery::Level(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Battery, E> {
                Ok(Battery::Level(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Battery, E> {
                Ok(Battery::Level(v as f64))
            }
        }

        d.deserialize_any(BatteryVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticHardwareProfile {
    /// Work units per second.
    pub cpu_perf_index: f64,
    /// MiB.
    pub memory: u64,
    /// MiB per second.
    pub link_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSoftwareProfile {
    pub os_tag: String,
    #[serde(default)]
    pub supported_runtimes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicStatus {
    pub utilization: f64,
    pub battery: Battery,
    /// Fraction of charge lost per second while running. Advertised so that
    /// peers can predict battery exhaustion; zero for mains nodes.
    #[serde(default)]
    pub battery_drain_rate: f64,
    pub position: Position,
    #[serde(default)]
    pub scheduled_task_ids: Vec<TaskId>,
    #[serde(default)]
    pub status_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityAdvertisement {
    pub node: NodeId,
    #[serde(default)]
    pub task_typologies: BTreeSet<String>,
    #[serde(default)]
    pub data_sources: BTreeSet<DataSourceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoSRequirement {
    /// Seconds from submission.
    pub deadline: f64,
    #[serde(default = "default_replicas")]
    pub min_success_replicas: u32,
}

fn default_replicas() -> u32 {
    1
}

impl QoSRequirement {
    pub fn with_deadline(deadline: f64) -> Self {
        Self {
            deadline,
            min_success_replicas: 1,
        }
    }
}

/// One input of a task: which data source, and how many MiB must be read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInput {
    pub source: DataSourceId,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub typology: String,
    /// Work units.
    pub work: f64,
    /// MiB.
    #[serde(default)]
    pub memory_demand: u64,
    #[serde(default)]
    pub input_data: Vec<DataInput>,
    pub qos: QoSRequirement,
    pub origin_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node: NodeId,
    pub hw: StaticHardwareProfile,
    pub sw: StaticSoftwareProfile,
    #[serde(rename = "dyn")]
    pub status: DynamicStatus,
    pub adv: CapabilityAdvertisement,
}

impl NodeProfile {
    pub fn position(&self) -> Position {
        self.status.position
    }

    pub fn holds(&self, data: DataSourceId) -> bool {
        self.adv.data_sources.contains(&data)
    }
}

/// True iff `profile` can run `task`: it advertises the typology, the
/// memory demand fits, and the node is not battery-dead.
pub fn capability_match(task: &TaskSpec, profile: &NodeProfile) -> bool {
    profile.adv.task_typologies.contains(&task.typology)
        && task.memory_demand <= profile.hw.memory
        && !profile.status.battery.is_depleted()
}

/// A violated invariant, with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: &str, message: &str) -> Self {
        Self {
            path: path.to_owned(),
            message: format!("{path} {message}"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn fraction(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Checks every profile invariant and returns all violations. An empty
/// list means the profile is valid.
pub fn validate_profile(profile: &NodeProfile) -> Vec<Violation> {
    let mut out = Vec::new();
    if !positive(profile.hw.cpu_perf_index) {
        out.push(Violation::new("hw.cpu_perf_index", "not positive"));
    }
    if profile.hw.memory == 0 {
        out.push(Violation::new("hw.memory", "not positive"));
    }
    if !positive(profile.hw.link_bandwidth) {
        out.push(Violation::new("hw.link_bandwidth", "not positive"));
    }
    if profile.sw.os_tag.is_empty() {
        out.push(Violation::new("sw.os_tag", "empty"));
    }
    if !fraction(profile.status.utilization) {
        out.push(Violation::new("dyn.utilization", "out of [0,1]"));
    }
    if let Battery::Level(l) = profile.status.battery {
        if !fraction(l) {
            out.push(Violation::new("dyn.battery", "out of [0,1]"));
        }
    }
    if !(profile.status.battery_drain_rate >= 0.0 && profile.status.battery_drain_rate.is_finite()) {
        out.push(Violation::new("dyn.battery_drain_rate", "negative or not finite"));
    }
    if !profile.status.position.is_finite() {
        out.push(Violation::new("dyn.position", "not finite"));
    }
    if profile.adv.node != profile.node {
        out.push(Violation::new("adv.node", "differs from node"));
    }
    if profile.adv.task_typologies.iter().any(String::is_empty) {
        out.push(Violation::new("adv.task_typologies", "contains an empty label"));
    }
    out
}

/// Checks the task invariants; ids are checked for uniqueness by the scenario.
pub fn validate_task(task: &TaskSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if !positive(task.work) {
        out.push(Violation::new("work", "not positive"));
    }
    if !positive(task.qos.deadline) {
        out.push(Violation::new("qos.deadline", "not positive"));
    }
    if task.qos.min_success_replicas == 0 {
        out.push(Violation::new("qos.min_success_replicas", "below 1"));
    }
    if task.typology.is_empty() {
        out.push(Violation::new("typology", "empty"));
    }
    for (i, input) in task.input_data.iter().enumerate() {
        if !(input.size.is_finite() && input.size >= 0.0) {
            out.push(Violation::new(
                &format!("input_data[{i}].size"),
                "negative or not finite",
            ));
        }
    }
    out
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::NodeId;

/// Mesh link model: affine latency in distance, Bernoulli loss, disk
/// radio range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetModel {
    pub base_latency: f64,
    pub latency_per_meter: f64,
    pub loss_prob: f64,
    pub radio_range: f64,
}

impl Default for NetModel {
    /// Synthetic defaults; no measured mesh figures back them.
    fn default() -> Self {
        Self {
            base_latency: 0.01,
            latency_per_meter: 0.0001,
            loss_prob: 0.0,
            radio_range: 400.0,
        }
    }
}

impl NetModel {
    pub fn latency(&self, distance: f64) -> f64 {
        self.base_latency + self.latency_per_meter * distance
    }

    /// Round trip between two nodes at the edge of radio range.
    pub fn expected_rtt(&self) -> f64 {
        2.0 * self.latency(self.radio_range)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("net.base_latency", self.base_latency),
            ("net.latency_per_meter", self.latency_per_meter),
            ("net.radio_range", self.radio_range),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("{name} must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            out.push("net.loss_prob out of [0,1]".to_owned());
        }
        out
    }
}

/// A window during which traffic between two disjoint groups is cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionWindow {
    pub group_a: BTreeSet<NodeId>,
    pub group_b: BTreeSet<NodeId>,
    pub start: f64,
    pub end: f64,
}

impl PartitionWindow {
    pub fn is_active(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn separates(&self, a: NodeId, b: NodeId) -> bool {
        (self.group_a.contains(&a) && self.group_b.contains(&b))
            || (self.group_b.contains(&a) && self.group_a.contains(&b))
    }
}

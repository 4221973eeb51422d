//! Placement scoring and the decisions of the offer/claim protocol.
//!
//! Everything here is a pure function; the protocol state (outstanding
//! offers, claims, attempts) lives with the task's origin in the agent.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, TaskId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("weights must be non-negative and not all zero, got ({0}, {1}, {2})")]
    BadWeights(f64, f64, f64),
}

/// Relative importance of availability, deadline slack and data locality.
/// Always normalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub availability: f64,
    pub qos: f64,
    pub locality: f64,
}

impl Weights {
    pub fn new(availability: f64, qos: f64, locality: f64) -> Result<Self, SchedulerError> {
        let sum = availability + qos + locality;
        let ok = [availability, qos, locality].iter().all(|w| w.is_finite() && *w >= 0.0) && sum > 0.0;
        if !ok {
            return Err(SchedulerError::BadWeights(availability, qos, locality));
        }
        Ok(Self {
            availability: availability / sum,
            qos: qos / sum,
            locality: locality / sum,
        })
    }
}

impl Default for Weights {
    fn default() -> Self {
        Self::new(0.4, 0.4, 0.2).expect("valid defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerParams {
    pub weights: Weights,
    /// Offers sent per placement round.
    pub k: usize,
    pub max_attempts: u32,
    /// Distance at which the locality score halves, in meters.
    pub locality_scale: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            k: 3,
            max_attempts: 5,
            locality_scale: 100.0,
        }
    }
}

/// Raw per-candidate predictions a score is computed from. Kept so that a
/// decision can be re-derived independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateInputs {
    pub node: NodeId,
    pub availability: f64,
    pub predicted_completion: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementScore {
    pub availability: f64,
    pub qos: f64,
    pub locality: f64,
    pub total: f64,
}

pub fn qos_component(deadline: f64, predicted_completion: f64) -> f64 {
    if predicted_completion <= 0.0 {
        return 1.0;
    }
    (deadline / predicted_completion).clamp(0.0, 1.0)
}

pub fn locality_component(distance: f64, scale: f64) -> f64 {
    1.0 / (1.0 + distance / scale)
}

pub fn combine(availability: f64, qos: f64, locality: f64, w: &Weights) -> PlacementScore {
    PlacementScore {
        availability,
        qos,
        locality,
        total: w.availability * availability + w.qos * qos + w.locality * locality,
    }
}

/// Scores one candidate. `deadline` is the time left until the task's
/// deadline.
pub fn score(c: &CandidateInputs, deadline: f64, params: &SchedulerParams) -> PlacementScore {
    combine(
        c.availability.clamp(0.0, 1.0),
        qos_component(deadline, c.predicted_completion),
        locality_component(c.distance, params.locality_scale),
        &params.weights,
    )
}

/// Descending total, ties to the lower node id.
pub fn rank_cmp(a: &(NodeId, PlacementScore), b: &(NodeId, PlacementScore)) -> Ordering {
    b.1.total.total_cmp(&a.1.total).then(a.0.cmp(&b.0))
}

pub fn rank(mut scored: Vec<(NodeId, PlacementScore)>) -> Vec<(NodeId, PlacementScore)> {
    scored.sort_by(rank_cmp);
    scored
}

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    LocalAdmit,
    Offers(Vec<NodeId>),
    Unschedulable,
}

/// Local-first placement: if the origin can meet the task itself nothing
/// is sent; otherwise the best `k` candidates receive offers.
pub fn place(
    self_feasible: bool,
    candidates: &[CandidateInputs],
    deadline: f64,
    params: &SchedulerParams,
) -> Placement {
    if self_feasible {
        return Placement::LocalAdmit;
    }
    if candidates.is_empty() {
        return Placement::Unschedulable;
    }
    let scored = candidates
        .iter()
        .map(|c| (c.node, score(c, deadline, params)))
        .collect();
    Placement::Offers(rank(scored).into_iter().take(params.k).map(|(n, _)| n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Capability,
    Memory,
    Deadline,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Executor-side answer to an OFFER.
pub fn offer_verdict(
    capable: bool,
    committed_memory: u64,
    demand: u64,
    capacity: u64,
    predicted_completion: f64,
    deadline: f64,
) -> Verdict {
    if !capable {
        Verdict::Reject(RejectReason::Capability)
    } else if committed_memory.saturating_add(demand) > capacity {
        Verdict::Reject(RejectReason::Memory)
    } else if predicted_completion > deadline {
        Verdict::Reject(RejectReason::Deadline)
    } else {
        Verdict::Accept
    }
}

/// Picks the winner among ACCEPTs that arrived together: earliest first,
/// then lowest node id.
pub fn arbitrate(accepts: &[(f64, NodeId)]) -> Option<NodeId> {
    accepts
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, n)| *n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentState {
    Offered,
    Active,
    Finished,
    Abandoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: TaskId,
    pub node: NodeId,
    pub attempt: u32,
    pub claimed_at: f64,
    pub state: AssignmentState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replacement {
    Retry { task_id: TaskId, attempt: u32 },
    FailedPermanent { task_id: TaskId },
}

/// Re-placement decisions after `dead` was declared dead: every active
/// assignment on it moves to the next attempt unless the cap is reached.
pub fn on_member_dead(dead: NodeId, assignments: &[Assignment], max_attempts: u32) -> Vec<Replacement> {
    assignments
        .iter()
        .filter(|a| a.node == dead && a.state == AssignmentState::Active)
        .map(|a| next_attempt(a.task_id, a.attempt, max_attempts))
        .collect()
}

pub fn next_attempt(task_id: TaskId, attempt: u32, max_attempts: u32) -> Replacement {
    if attempt >= max_attempts {
        Replacement::FailedPermanent { task_id }
    } else {
        Replacement::Retry {
            task_id,
            attempt: attempt + 1,
        }
    }
}

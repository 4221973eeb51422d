//! Predictors used by the scheduler: availability, completion time and
//! load. All functions are pure over their inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::membership::{MemberStatus, Transition};
use crate::model::{distance, Battery, DataSourceId, NodeId, NodeProfile, Position, TaskSpec};
use crate::sim::NetModel;

/// Floor on the free-capacity fraction so saturated nodes yield a large
/// but finite completion time.
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CognitionError {
    #[error("horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),
    #[error("utilization must lie in [0,1], got {0}")]
    UtilizationOutOfRange(f64),
    #[error("smoothing factor must lie in (0,1], got {0}")]
    BadAlpha(f64),
}

/// Observed session lengths of one node plus the age of its current one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionHistory {
    pub completed: Vec<f64>,
    pub current_session_age: f64,
}

/// Add-one smoothed empirical probability that the current session lasts
/// another `horizon` seconds.
pub fn survival(history: &SessionHistory, horizon: f64) -> f64 {
    let age = history.current_session_age;
    let reached = history.completed.iter().filter(|&&d| d >= age).count();
    let survived = history.completed.iter().filter(|&&d| d >= age + horizon).count();
    (survived as f64 + 1.0) / (reached as f64 + 2.0)
}

/// 1 if the battery outlasts the horizon at the advertised drain rate.
pub fn battery_survival(profile: &NodeProfile, horizon: f64) -> f64 {
    match profile.status.battery {
        Battery::Mains => 1.0,
        Battery::Level(level) => {
            if level - profile.status.battery_drain_rate * horizon > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn predict_availability(
    profile: &NodeProfile,
    history: &SessionHistory,
    horizon: f64,
) -> Result<f64, CognitionError> {
    if horizon < 0.0 || horizon.is_nan() {
        return Err(CognitionError::NegativeHorizon(horizon));
    }
    Ok(battery_survival(profile, horizon) * survival(history, horizon))
}

/// Swap-in point for other availability models.
pub trait AvailabilityPredictor {
    fn predict(&self, profile: &NodeProfile, history: &SessionHistory, horizon: f64) -> f64;
}

/// The battery-times-survival estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalSurvival;

impl AvailabilityPredictor for EmpiricalSurvival {
    fn predict(&self, profile: &NodeProfile, history: &SessionHistory, horizon: f64) -> f64 {
        predict_availability(profile, history, horizon.max(0.0)).expect("horizon clamped")
    }
}

/// Where a task input can be read from, relative to a candidate node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataLocation {
    Local,
    Remote(Position),
}

pub fn exec_time(work: f64, perf: f64, utilization: f64, epsilon: f64) -> f64 {
    work / (perf * epsilon.max(1.0 - utilization))
}

pub fn transfer_time(size: f64, bandwidth: f64, net: &NetModel, dist: f64) -> f64 {
    size / bandwidth + net.base_latency + net.latency_per_meter * dist
}

/// Input transfer time for `task` on `profile`. An input without a known
/// location makes the task infeasible there (infinite time).
pub fn predict_transfer(
    task: &TaskSpec,
    profile: &NodeProfile,
    locations: &BTreeMap<DataSourceId, DataLocation>,
    net: &NetModel,
) -> f64 {
    let here = profile.position();
    task.input_data
        .iter()
        .map(|input| match locations.get(&input.source) {
            Some(DataLocation::Local) => 0.0,
            Some(DataLocation::Remote(at)) => {
                transfer_time(input.size, profile.hw.link_bandwidth, net, distance(here, *at))
            }
            None => f64::INFINITY,
        })
        .sum()
}

pub fn predict_completion(
    task: &TaskSpec,
    profile: &NodeProfile,
    locations: &BTreeMap<DataSourceId, DataLocation>,
    net: &NetModel,
    epsilon: f64,
) -> f64 {
    predict_transfer(task, profile, locations, net)
        + exec_time(
            task.work,
            profile.hw.cpu_perf_index,
            profile.status.utilization,
            epsilon,
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadForecast {
    pub ewma_utilization: f64,
    pub alpha: f64,
}

impl LoadForecast {
    pub fn new(initial: f64, alpha: f64) -> Result<Self, CognitionError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(CognitionError::BadAlpha(alpha));
        }
        if !(0.0..=1.0).contains(&initial) {
            return Err(CognitionError::UtilizationOutOfRange(initial));
        }
        Ok(Self {
            ewma_utilization: initial,
            alpha,
        })
    }
}

pub fn forecast_load(current: f64, state: LoadForecast) -> Result<LoadForecast, CognitionError> {
    if !(0.0..=1.0).contains(&current) {
        return Err(CognitionError::UtilizationOutOfRange(current));
    }
    let e = state.alpha * current + (1.0 - state.alpha) * state.ewma_utilization;
    Ok(LoadForecast {
        ewma_utilization: e.clamp(0.0, 1.0),
        alpha: state.alpha,
    })
}

#[derive(Debug, Clone, Default)]
struct Sessions {
    completed: Vec<f64>,
    started: Option<f64>,
}

/// Per-node session history built from the membership transitions this
/// node has witnessed.
#[derive(Debug, Clone, Default)]
pub struct SessionTracker {
    nodes: BTreeMap<NodeId, Sessions>,
}

impl SessionTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, t: &Transition, now: f64) {
        let s = self.nodes.entry(t.node).or_default();
        match t.to {
            MemberStatus::Alive => {
                if s.started.is_none() {
                    s.started = Some(now);
                }
            }
            // suspicion alone does not end a session
            MemberStatus::Suspect => {
                if s.started.is_none() {
                    s.started = Some(now);
                }
            }
            MemberStatus::Dead | MemberStatus::Left => {
                if let Some(start) = s.started.take() {
                    let d = now - start;
                    if d > 0.0 {
                        s.completed.push(d);
                    }
                }
            }
        }
    }

    pub fn history(&self, node: NodeId, now: f64) -> SessionHistory {
        match self.nodes.get(&node) {
            Some(s) => SessionHistory {
                completed: s.completed.clone(),
                current_session_age: s.started.map(|t| (now - t).max(0.0)).unwrap_or(0.0),
            },
            None => SessionHistory::default(),
        }
    }
}

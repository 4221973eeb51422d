//! Simulated task execution on one node.
//!
//! Running tasks share the node's free capacity equally. Progress is
//! integrated lazily: every call that observes or changes the running set
//! first advances all runs to `now`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, TaskId};

/// A run is complete once less than this fraction of its work remains.
pub const COMPLETION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Reserved,
    Running,
    Done,
    Failed,
    Evicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub task: TaskId,
    pub attempt: u32,
}

impl RunKey {
    pub fn new(task: TaskId, attempt: u32) -> Self {
        Self { task, attempt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub key: RunKey,
    pub origin: NodeId,
    pub state: RunState,
    pub work: f64,
    pub remaining_work: f64,
    /// Integrated progress, kept separately from `remaining_work` so the
    /// two can be checked against each other.
    pub progressed: f64,
    pub memory: u64,
    pub deadline_at: f64,
    pub reserved_until: f64,
    pub claimed: bool,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub warned: bool,
}

impl TaskRun {
    fn is_complete(&self) -> bool {
        self.remaining_work <= COMPLETION_TOLERANCE * self.work
    }
}

/// Advances one running task by `rate * dt` work units.
pub fn progress_tick(run: &TaskRun, rate: f64, dt: f64) -> TaskRun {
    let mut next = run.clone();
    if run.state != RunState::Running || dt <= 0.0 {
        return next;
    }
    let step = (rate * dt).min(run.remaining_work);
    next.remaining_work -= step;
    next.progressed += step;
    next
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("not enough memory: {committed} committed + {demand} requested > {capacity}")]
    Capacity { committed: u64, demand: u64, capacity: u64 },
    #[error("no reservation for task {0:?}")]
    Unknown(RunKey),
    #[error("reservation for task {0:?} expired")]
    Expired(RunKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub key: RunKey,
    pub origin: NodeId,
    pub work: f64,
    pub memory: u64,
    pub deadline_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosWarning {
    pub key: RunKey,
    pub origin: NodeId,
    pub projected_finish: f64,
    pub deadline_at: f64,
}

#[derive(Debug, Clone)]
pub struct Executor {
    perf: f64,
    capacity: u64,
    background_load: f64,
    runs: BTreeMap<RunKey, TaskRun>,
    last_advance: f64,
}

impl Executor {
    pub fn new(perf: f64, capacity: u64, background_load: f64) -> Self {
        Self {
            perf,
            capacity,
            background_load: background_load.clamp(0.0, 1.0),
            runs: BTreeMap::new(),
            last_advance: 0.0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn background_load(&self) -> f64 {
        self.background_load
    }

    pub fn run(&self, key: RunKey) -> Option<&TaskRun> {
        self.runs.get(&key)
    }

    pub fn runs(&self) -> impl Iterator<Item = &TaskRun> {
        self.runs.values()
    }

    fn holds_memory(r: &TaskRun) -> bool {
        matches!(r.state, RunState::Reserved | RunState::Running)
    }

    pub fn committed_memory(&self) -> u64 {
        self.runs
            .values()
            .filter(|r| Self::holds_memory(r))
            .map(|r| r.memory)
            .sum()
    }

    pub fn running_count(&self) -> usize {
        self.runs.values().filter(|r| r.state == RunState::Running).count()
    }

    /// Share of capacity unavailable to a newly arriving task.
    pub fn utilization(&self) -> f64 {
        let n = self.running_count() as f64;
        self.background_load + (1.0 - self.background_load) * n / (n + 1.0)
    }

    /// Per-task progress rate under the current running set.
    pub fn rate(&self) -> f64 {
        let n = self.running_count();
        if n == 0 {
            0.0
        } else {
            self.perf * (1.0 - self.background_load) / n as f64
        }
    }

    pub fn advance(&mut self, now: f64) {
        let dt = now - self.last_advance;
        if dt > 0.0 {
            let rate = self.rate();
            for r in self.runs.values_mut() {
                if r.state == RunState::Running {
                    *r = progress_tick(r, rate, dt);
                }
            }
        }
        self.last_advance = self.last_advance.max(now);
    }

    pub fn set_background_load(&mut self, now: f64, load: f64) {
        self.advance(now);
        self.background_load = load.clamp(0.0, 1.0);
    }

    pub fn reserve(&mut self, req: Reservation, now: f64, ttl: f64) -> Result<(), ExecError> {
        if let Some(r) = self.runs.get(&req.key) {
            // duplicate offer for a reservation we already hold
            if r.state == RunState::Reserved {
                return Ok(());
            }
            return Err(ExecError::Unknown(req.key));
        }
        let committed = self.committed_memory();
        if committed.saturating_add(req.memory) > self.capacity {
            return Err(ExecError::Capacity {
                committed,
                demand: req.memory,
                capacity: self.capacity,
            });
        }
        self.runs.insert(
            req.key,
            TaskRun {
                key: req.key,
                origin: req.origin,
                state: RunState::Reserved,
                work: req.work,
                remaining_work: req.work,
                progressed: 0.0,
                memory: req.memory,
                deadline_at: req.deadline_at,
                reserved_until: now + ttl,
                claimed: false,
                started_at: None,
                finished_at: None,
                warned: false,
            },
        );
        Ok(())
    }

    /// Turns a reservation into a commitment. Inputs are fetched next and
    /// [`Executor::start`] follows once they are in.
    pub fn claim(&mut self, key: RunKey, now: f64) -> Result<(), ExecError> {
        let Some(r) = self.runs.get_mut(&key) else {
            return Err(ExecError::Unknown(key));
        };
        if r.state != RunState::Reserved {
            return Err(ExecError::Unknown(key));
        }
        if r.claimed {
            return Ok(());
        }
        if now > r.reserved_until {
            self.runs.remove(&key);
            return Err(ExecError::Expired(key));
        }
        r.claimed = true;
        Ok(())
    }

    pub fn start(&mut self, key: RunKey, now: f64) -> bool {
        self.advance(now);
        match self.runs.get_mut(&key) {
            Some(r) if r.state == RunState::Reserved && r.claimed => {
                r.state = RunState::Running;
                r.started_at = Some(now);
                true
            }
            _ => false,
        }
    }

    /// Drops an unclaimed reservation whose TTL has passed.
    pub fn expire(&mut self, key: RunKey, now: f64) -> bool {
        match self.runs.get(&key) {
            Some(r) if r.state == RunState::Reserved && !r.claimed && now >= r.reserved_until => {
                self.runs.remove(&key);
                true
            }
            _ => false,
        }
    }

    /// CANCEL: frees a reservation or evicts a running attempt. Returns the
    /// state the run was in.
    pub fn release(&mut self, key: RunKey, now: f64) -> Option<RunState> {
        self.advance(now);
        let state = self.runs.get(&key)?.state;
        match state {
            RunState::Reserved => {
                self.runs.remove(&key);
            }
            RunState::Running => {
                let r = self.runs.get_mut(&key).expect("present");
                r.state = RunState::Evicted;
                r.finished_at = Some(now);
            }
            _ => {}
        }
        Some(state)
    }

    /// Advances to `now` and returns runs that finished.
    pub fn collect_done(&mut self, now: f64) -> Vec<TaskRun> {
        self.advance(now);
        let rate = self.rate();
        let mut done = Vec::new();
        for r in self.runs.values_mut() {
            // the second test catches leftovers too small to move the clock
            if r.state == RunState::Running && (r.is_complete() || now + r.remaining_work / rate == now) {
                r.state = RunState::Done;
                r.finished_at = Some(now);
                done.push(r.clone());
            }
        }
        done
    }

    /// Time of the next completion if nothing changes.
    pub fn next_completion(&self, now: f64) -> Option<f64> {
        let rate = self.rate();
        if rate <= 0.0 {
            return None;
        }
        self.runs
            .values()
            .filter(|r| r.state == RunState::Running)
            .map(|r| now + r.remaining_work / rate)
            .min_by(f64::total_cmp)
    }

    /// Runs whose projected finish now overshoots the deadline. Each
    /// attempt is reported once.
    pub fn qos_monitor(&mut self, now: f64) -> Vec<QosWarning> {
        self.advance(now);
        let rate = self.rate();
        let mut out = Vec::new();
        for r in self.runs.values_mut() {
            if r.state != RunState::Running || r.warned {
                continue;
            }
            let projected = if rate > 0.0 {
                now + r.remaining_work / rate
            } else {
                f64::INFINITY
            };
            if projected > r.deadline_at {
                r.warned = true;
                out.push(QosWarning {
                    key: r.key,
                    origin: r.origin,
                    projected_finish: projected,
                    deadline_at: r.deadline_at,
                });
            }
        }
        out
    }

    /// Graceful departure: every held run fails. Returns the runs that were
    /// running or claimed so their origins can be told.
    pub fn fail_all(&mut self, now: f64) -> Vec<TaskRun> {
        self.advance(now);
        let mut out = Vec::new();
        for r in self.runs.values_mut() {
            if Self::holds_memory(r) {
                let was_committed = r.state == RunState::Running || r.claimed;
                r.state = RunState::Failed;
                r.finished_at = Some(now);
                if was_committed {
                    out.push(r.clone());
                }
            }
        }
        out
    }

    /// Forgets finished runs; they only matter for the trace.
    pub fn prune(&mut self) {
        self.runs.retain(|_, r| Self::holds_memory(r));
    }
}

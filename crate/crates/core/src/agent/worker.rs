//! Executor side: offers, reservations, runs and data replication.

use super::{Agent, Cx, Note, ReplaceCause, Timer};
use crate::cognition::{predict_completion, transfer_time};
use crate::dataplane::Replication;
use crate::executor::{Reservation, RunKey, RunState};
use crate::model::{capability_match, distance, DataSourceId, NodeId, TaskId, TaskSpec};
use crate::scheduler::{offer_verdict, RejectReason, Verdict};
use crate::wire::{FailCause, Message};

// Settling threshold for the load forecast once nothing runs.
const EWMA_SETTLED: f64 = 0.01;

impl Agent {
    /// Routes a report to the task's origin, which may be this node.
    fn report(&mut self, origin: NodeId, body: Message, cx: Cx) {
        if origin != self.me {
            self.send(cx, origin, body);
            return;
        }
        let me = self.me;
        match body {
            Message::Done {
                task,
                attempt,
                transfer_time,
            } => self.on_done(me, task, attempt, transfer_time, cx),
            Message::Failed { task, attempt, cause } => {
                let c = match cause {
                    FailCause::DataUnavailable => ReplaceCause::DataUnavailable,
                    _ => ReplaceCause::Failed,
                };
                self.on_attempt_failed(me, task, attempt, c, cx)
            }
            Message::Nack { task, attempt } => self.on_attempt_failed(me, task, attempt, ReplaceCause::Nack, cx),
            Message::QosWarn { task, attempt, .. } => self.on_qos_warn(me, task, attempt, cx),
            _ => {}
        }
    }

    fn leaving(&self) -> bool {
        !self.membership.view().is_live(self.me)
    }

    pub(super) fn on_offer(&mut self, from: NodeId, spec: TaskSpec, attempt: u32, deadline_at: f64, cx: Cx) {
        let task = spec.task_id;
        let key = RunKey::new(task, attempt);
        if self.leaving() {
            let body = Message::Reject {
                task,
                attempt,
                reason: RejectReason::Down,
            };
            self.send(cx, from, body);
            return;
        }
        let me = self.effective_profile();
        let locs = self
            .catalog
            .locations_for(&spec, &me, &self.registry, self.membership.view());
        let predicted = predict_completion(&spec, &me, &locs, &self.cfg.net, self.cfg.epsilon);
        let verdict = offer_verdict(
            capability_match(&spec, &me),
            self.executor.committed_memory(),
            spec.memory_demand,
            self.executor.capacity(),
            predicted,
            deadline_at - cx.now,
        );
        let verdict = match verdict {
            Verdict::Accept => {
                let req = Reservation {
                    key,
                    origin: from,
                    work: spec.work,
                    memory: spec.memory_demand,
                    deadline_at,
                };
                match self.executor.reserve(req, cx.now, self.cfg.offer_timeout) {
                    Ok(()) => Verdict::Accept,
                    Err(_) => Verdict::Reject(RejectReason::Memory),
                }
            }
            v => v,
        };
        match verdict {
            Verdict::Accept => {
                self.held.insert(key, (spec, 0.0));
                cx.set_timer(self.cfg.offer_timeout, Timer::ReservationExpiry(key));
                cx.note(Note::Reserved {
                    task,
                    attempt,
                    committed: self.executor.committed_memory(),
                    capacity: self.executor.capacity(),
                });
                self.send(cx, from, Message::Accept { task, attempt });
            }
            Verdict::Reject(reason) => self.send(cx, from, Message::Reject { task, attempt, reason }),
        }
    }

    /// Hosts an attempt originated here, skipping the offer round.
    pub(super) fn host(&mut self, origin: NodeId, spec: TaskSpec, attempt: u32, deadline_at: f64, cx: Cx) {
        let key = RunKey::new(spec.task_id, attempt);
        let req = Reservation {
            key,
            origin,
            work: spec.work,
            memory: spec.memory_demand,
            deadline_at,
        };
        let ok = self.executor.reserve(req, cx.now, self.cfg.offer_timeout).is_ok()
            && self.executor.claim(key, cx.now).is_ok();
        if !ok {
            self.executor.release(key, cx.now);
            self.report(
                origin,
                Message::Nack {
                    task: key.task,
                    attempt,
                },
                cx,
            );
            return;
        }
        cx.note(Note::Reserved {
            task: key.task,
            attempt,
            committed: self.executor.committed_memory(),
            capacity: self.executor.capacity(),
        });
        self.held.insert(key, (spec, 0.0));
        self.fetch_inputs(key, origin, cx);
    }

    pub(super) fn on_claim(&mut self, from: NodeId, task: TaskId, attempt: u32, cx: Cx) {
        let key = RunKey::new(task, attempt);
        if self.leaving() || self.executor.claim(key, cx.now).is_err() {
            self.held.remove(&key);
            self.send(cx, from, Message::Nack { task, attempt });
            return;
        }
        self.fetch_inputs(key, from, cx);
    }

    /// Resolves every input to its nearest live replica and starts the run
    /// once the transfers would have finished.
    fn fetch_inputs(&mut self, key: RunKey, origin: NodeId, cx: Cx) {
        let Some((spec, _)) = self.held.get(&key) else { return };
        let here = self.profile.position();
        let bw = self.profile.hw.link_bandwidth;
        let mut total = 0.0;
        for input in &spec.input_data {
            if self.profile.holds(input.source) {
                continue;
            }
            let view = self.membership.view();
            let replica = self
                .catalog
                .resolve(input.source, here, &self.registry, view)
                .ok()
                .and_then(|n| self.registry.get(n))
                .map(|e| e.profile.position());
            match replica {
                Some(at) => total += transfer_time(input.size, bw, &self.cfg.net, distance(here, at)),
                None => {
                    self.executor.release(key, cx.now);
                    self.held.remove(&key);
                    cx.note(Note::Released {
                        task: key.task,
                        attempt: key.attempt,
                    });
                    let body = Message::Failed {
                        task: key.task,
                        attempt: key.attempt,
                        cause: FailCause::DataUnavailable,
                    };
                    self.report(origin, body, cx);
                    return;
                }
            }
        }
        if let Some(h) = self.held.get_mut(&key) {
            h.1 = total;
        }
        cx.set_timer(total, Timer::StartRun(key));
    }

    pub(super) fn on_start_run(&mut self, key: RunKey, cx: Cx) {
        if !self.executor.start(key, cx.now) {
            return;
        }
        let run = self.executor.run(key).expect("just started");
        cx.note(Note::RunStarted {
            task: key.task,
            attempt: key.attempt,
            origin: run.origin,
            committed: self.executor.committed_memory(),
            capacity: self.executor.capacity(),
        });
        self.after_running_set_change(cx);
    }

    pub(super) fn after_running_set_change(&mut self, cx: Cx) {
        self.completion_epoch += 1;
        if let Some(at) = self.executor.next_completion(cx.now) {
            let epoch = self.completion_epoch;
            cx.set_timer((at - cx.now).max(0.0), Timer::Completion { epoch });
        }
        if !self.ticking {
            self.ticking = true;
            cx.set_timer(self.cfg.executor_tick, Timer::ExecTick);
        }
        self.publish(cx, false);
    }

    pub(super) fn collect_completions(&mut self, cx: Cx) {
        let done = self.executor.collect_done(cx.now);
        for run in done {
            let transfer = self.held.remove(&run.key).map(|h| h.1).unwrap_or(0.0);
            cx.note(Note::RunEnded {
                task: run.key.task,
                attempt: run.key.attempt,
                state: run.state,
                work: run.work,
                progressed: run.progressed,
            });
            let body = Message::Done {
                task: run.key.task,
                attempt: run.key.attempt,
                transfer_time: transfer,
            };
            self.report(run.origin, body, cx);
        }
        self.executor.prune();
        self.after_running_set_change(cx);
    }

    pub(super) fn on_cancel(&mut self, task: TaskId, attempt: u32, cx: Cx) {
        let key = RunKey::new(task, attempt);
        self.held.remove(&key);
        let Some(prev) = self.executor.release(key, cx.now) else {
            return;
        };
        match prev {
            RunState::Running => {
                let run = self.executor.run(key).expect("evicted runs stay until pruned").clone();
                cx.note(Note::RunEnded {
                    task,
                    attempt,
                    state: run.state,
                    work: run.work,
                    progressed: run.progressed,
                });
                self.executor.prune();
                self.after_running_set_change(cx);
            }
            RunState::Reserved => cx.note(Note::Released { task, attempt }),
            _ => {}
        }
    }

    pub(super) fn on_reservation_expiry(&mut self, key: RunKey, cx: Cx) {
        if self.executor.expire(key, cx.now) {
            self.held.remove(&key);
            cx.note(Note::Released {
                task: key.task,
                attempt: key.attempt,
            });
        }
    }

    pub(super) fn on_exec_tick(&mut self, cx: Cx) {
        for w in self.executor.qos_monitor(cx.now) {
            cx.note(Note::QosWarn {
                task: w.key.task,
                attempt: w.key.attempt,
            });
            let body = Message::QosWarn {
                task: w.key.task,
                attempt: w.key.attempt,
                projected_finish: w.projected_finish,
            };
            self.report(w.origin, body, cx);
        }
        self.update_load();
        self.publish(cx, false);
        let busy = self.executor.running_count() > 0;
        let settled = (self.load.ewma_utilization - self.executor.utilization()).abs() < EWMA_SETTLED;
        if busy || !settled {
            cx.set_timer(self.cfg.executor_tick, Timer::ExecTick);
        } else {
            self.ticking = false;
        }
    }

    /// The origin of some held runs is gone; nobody would collect results.
    pub(super) fn worker_origin_gone(&mut self, origin: NodeId, cx: Cx) {
        let keys: Vec<RunKey> = self
            .executor
            .runs()
            .filter(|r| r.origin == origin && matches!(r.state, RunState::Reserved | RunState::Running))
            .map(|r| r.key)
            .collect();
        for k in keys {
            self.on_cancel(k.task, k.attempt, cx);
        }
    }

    pub(super) fn worker_leave(&mut self, cx: Cx) {
        for run in self.executor.fail_all(cx.now) {
            cx.note(Note::RunEnded {
                task: run.key.task,
                attempt: run.key.attempt,
                state: run.state,
                work: run.work,
                progressed: run.progressed,
            });
            if run.origin != self.me {
                let body = Message::Failed {
                    task: run.key.task,
                    attempt: run.key.attempt,
                    cause: FailCause::Leaving,
                };
                self.send(cx, run.origin, body);
            }
        }
        self.held.clear();
        self.executor.prune();
    }

    // ---- replication ----------------------------------------------------

    pub(super) fn replicate(&mut self, source: DataSourceId, cx: Cx) {
        if self.profile.holds(source) || self.replications.contains_key(&source) {
            return;
        }
        self.fetch_from(source, Default::default(), cx);
    }

    fn fetch_from(&mut self, source: DataSourceId, tried: std::collections::BTreeSet<NodeId>, cx: Cx) {
        let here = self.profile.position();
        let view = self.membership.view();
        let target = self
            .catalog
            .resolve_excluding(source, here, &self.registry, view, &tried)
            .ok()
            .and_then(|n| Some((n, self.registry.get(n)?.profile.position())));
        let (Some((from, at)), Some(ann)) = (target, self.catalog.get(source).copied()) else {
            cx.note(Note::ReplicationFailed { source });
            return;
        };
        let bw = self.profile.hw.link_bandwidth;
        let expected = transfer_time(ann.size, bw, &self.cfg.net, distance(here, at));
        self.replication_epoch += 1;
        let epoch = self.replication_epoch;
        let mut tried = tried;
        tried.insert(from);
        self.replications.insert(
            source,
            Replication {
                id: source,
                source: from,
                started_at: cx.now,
                tried,
                epoch,
            },
        );
        self.send(cx, from, Message::Fetch { source, bandwidth: bw });
        let timeout = expected + 2.0 * self.cfg.membership.t_probe;
        cx.set_timer(timeout, Timer::ReplicationTimeout { source, epoch });
    }

    pub(super) fn on_fetch(&mut self, from: NodeId, source: DataSourceId, bandwidth: f64, cx: Cx) {
        if !self.profile.holds(source) || bandwidth <= 0.0 || bandwidth.is_nan() {
            return;
        }
        let Some(ann) = self.catalog.get(source) else { return };
        cx.set_timer(ann.size / bandwidth, Timer::SendData { to: from, source });
    }

    pub(super) fn on_data(&mut self, from: NodeId, source: DataSourceId, cx: Cx) {
        let Some(rep) = self.replications.get(&source) else {
            return;
        };
        if rep.source != from {
            return;
        }
        let rep = self.replications.remove(&source).expect("present");
        self.profile.adv.data_sources.insert(source);
        self.publish(cx, false);
        cx.note(Note::ReplicationDone {
            source,
            from,
            elapsed: cx.now - rep.started_at,
        });
    }

    pub(super) fn on_replication_timeout(&mut self, source: DataSourceId, epoch: u64, cx: Cx) {
        let Some(rep) = self.replications.get(&source) else {
            return;
        };
        if rep.epoch != epoch {
            return;
        }
        let rep = self.replications.remove(&source).expect("present");
        cx.note(Note::ReplicationAborted {
            source,
            from: rep.source,
        });
        self.fetch_from(source, rep.tried, cx);
    }
}

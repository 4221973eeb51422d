//! Origin side: local-first admission, offers, arbitration and replacement.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Agent, Cx, Note, PlacementRecord, ReplaceCause, SelfCheck, Timer};
use crate::cognition::{predict_completion, AvailabilityPredictor, EmpiricalSurvival};
use crate::model::{capability_match, distance, NodeId, NodeProfile, TaskId, TaskSpec};
use crate::scheduler::{arbitrate, place, CandidateInputs, Placement};
use crate::wire::Message;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Phase {
    Offering {
        offered: BTreeSet<NodeId>,
        responded: BTreeSet<NodeId>,
        accepts: Vec<(f64, NodeId)>,
        arbitrating: bool,
    },
    Active {
        node: NodeId,
        since: f64,
    },
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OriginTask {
    pub spec: TaskSpec,
    pub submitted_at: f64,
    pub deadline_at: f64,
    pub attempts: BTreeMap<u32, Phase>,
    pub resolved: bool,
    pub speculated: bool,
    /// Nodes that failed an attempt of this task.
    pub excluded: BTreeSet<NodeId>,
}

impl OriginTask {
    fn live_attempts(&self) -> impl Iterator<Item = (&u32, &Phase)> {
        self.attempts.iter().filter(|(_, p)| !matches!(p, Phase::Closed))
    }

    fn hosts(&self) -> BTreeSet<NodeId> {
        self.attempts
            .values()
            .filter_map(|p| match p {
                Phase::Active { node, .. } => Some(*node),
                _ => None,
            })
            .collect()
    }
}

impl Agent {
    /// This node's profile as the predictors should see it: utilization is
    /// the larger of the forecast and the instantaneous value.
    pub(super) fn effective_profile(&self) -> NodeProfile {
        let mut p = self.profile.clone();
        p.status.utilization = self
            .load
            .ewma_utilization
            .max(self.executor.utilization())
            .clamp(0.0, 1.0);
        p
    }

    pub(super) fn submit(&mut self, spec: TaskSpec, cx: Cx) {
        let id = spec.task_id;
        let deadline_at = cx.now + spec.qos.deadline;
        cx.note(Note::Submitted { task: id, deadline_at });
        self.origin.insert(
            id,
            OriginTask {
                spec,
                submitted_at: cx.now,
                deadline_at,
                attempts: BTreeMap::new(),
                resolved: false,
                speculated: false,
                excluded: BTreeSet::new(),
            },
        );
        self.start_attempt(id, &BTreeSet::new(), cx);
    }

    fn self_check(&self, spec: &TaskSpec, excluded: bool) -> SelfCheck {
        let me = self.effective_profile();
        let locs = self
            .catalog
            .locations_for(spec, &me, &self.registry, self.membership.view());
        SelfCheck {
            capable: capability_match(spec, &me),
            excluded,
            committed_memory: self.executor.committed_memory(),
            demand: spec.memory_demand,
            capacity: self.executor.capacity(),
            predicted_completion: predict_completion(spec, &me, &locs, &self.cfg.net, self.cfg.epsilon),
        }
    }

    fn candidates(&self, spec: &TaskSpec, excluded: &BTreeSet<NodeId>, now: f64) -> Vec<CandidateInputs> {
        let view = self.membership.view();
        let anchor = self
            .catalog
            .data_centroid(spec, self.profile.position(), &self.registry, view);
        self.registry
            .query(view, |e| capability_match(spec, &e.profile))
            .into_iter()
            // offers travel one hop, so only nodes heard from directly qualify
            .filter(|h| !h.stale && h.entry.node != self.me && !excluded.contains(&h.entry.node))
            .filter(|h| self.membership.neighbors().contains(&h.entry.node))
            .map(|h| {
                let p = &h.entry.profile;
                let locs = self.catalog.locations_for(spec, p, &self.registry, view);
                let predicted = predict_completion(spec, p, &locs, &self.cfg.net, self.cfg.epsilon);
                let history = self.sessions.history(p.node, now);
                let horizon = if predicted.is_finite() {
                    predicted
                } else {
                    spec.qos.deadline
                };
                CandidateInputs {
                    node: p.node,
                    availability: EmpiricalSurvival.predict(p, &history, horizon),
                    predicted_completion: predicted,
                    distance: distance(p.position(), anchor),
                }
            })
            .collect()
    }

    /// Opens a new attempt for `task`. `avoid` adds per-attempt exclusions
    /// on top of the nodes that already failed it.
    pub(super) fn start_attempt(&mut self, task: TaskId, avoid: &BTreeSet<NodeId>, cx: Cx) {
        let Some(t) = self.origin.get(&task) else { return };
        if t.resolved {
            return;
        }
        let used = t.attempts.len() as u32;
        if used >= self.cfg.scheduler.max_attempts {
            if t.live_attempts().next().is_none() {
                let t = self.origin.get_mut(&task).expect("present");
                t.resolved = true;
                cx.note(Note::FailedPermanent { task, attempts: used });
            }
            return;
        }
        let attempt = used + 1;
        let spec = t.spec.clone();
        let remaining = t.deadline_at - cx.now;
        let mut excluded = t.excluded.clone();
        excluded.extend(avoid.iter().copied());

        let check = self.self_check(&spec, excluded.contains(&self.me));
        let candidates = self.candidates(&spec, &excluded, cx.now);
        let feasible = check.feasible(remaining);
        let placement = place(feasible, &candidates, remaining, &self.cfg.scheduler);
        let selected = match &placement {
            Placement::LocalAdmit => vec![self.me],
            Placement::Offers(v) => v.clone(),
            Placement::Unschedulable => Vec::new(),
        };
        cx.note(Note::Placement(PlacementRecord {
            task,
            attempt,
            deadline: remaining,
            weights: self.cfg.scheduler.weights,
            k: self.cfg.scheduler.k,
            locality_scale: self.cfg.scheduler.locality_scale,
            self_check: check,
            candidates,
            selected,
        }));

        let t = self.origin.get_mut(&task).expect("present");
        match placement {
            Placement::LocalAdmit => {
                self.admit_local(task, attempt, false, cx);
            }
            Placement::Offers(nodes) => {
                t.attempts.insert(
                    attempt,
                    Phase::Offering {
                        offered: nodes.iter().copied().collect(),
                        responded: BTreeSet::new(),
                        accepts: Vec::new(),
                        arbitrating: false,
                    },
                );
                let deadline_at = t.deadline_at;
                for n in nodes {
                    let body = Message::Offer {
                        task: spec.clone(),
                        attempt,
                        deadline_at,
                    };
                    self.send(cx, n, body);
                }
                cx.set_timer(self.cfg.offer_timeout, Timer::OfferTimeout { task, attempt });
            }
            Placement::Unschedulable => {
                t.attempts.insert(attempt, Phase::Closed);
                self.fallback(task, attempt, cx);
            }
        }
    }

    /// Runs the attempt on this node.
    fn admit_local(&mut self, task: TaskId, attempt: u32, best_effort: bool, cx: Cx) {
        let t = self.origin.get_mut(&task).expect("present");
        t.attempts.insert(
            attempt,
            Phase::Active {
                node: self.me,
                since: cx.now,
            },
        );
        let spec = t.spec.clone();
        let deadline_at = t.deadline_at;
        cx.note(Note::LocalAdmit {
            task,
            attempt,
            best_effort,
        });
        self.host(self.me, spec, attempt, deadline_at, cx);
    }

    /// No remote executor could be found: admit locally if possible,
    /// otherwise try again later.
    fn fallback(&mut self, task: TaskId, attempt: u32, cx: Cx) {
        let Some(t) = self.origin.get_mut(&task) else { return };
        t.attempts.insert(attempt, Phase::Closed);
        let spec = t.spec.clone();
        let excluded = t.excluded.contains(&self.me);
        let others_live = t.live_attempts().next().is_some();
        let fits = self.executor.committed_memory().saturating_add(spec.memory_demand) <= self.executor.capacity();
        if capability_match(&spec, &self.effective_profile()) && fits && !excluded {
            self.admit_local(task, attempt, true, cx);
            return;
        }
        cx.note(Note::Unplaced { task, attempt });
        if !others_live {
            cx.set_timer(self.cfg.retry_delay, Timer::Retry { task });
        }
    }

    pub(super) fn on_retry(&mut self, task: TaskId, cx: Cx) {
        self.start_attempt(task, &BTreeSet::new(), cx);
    }

    fn phase_mut(&mut self, task: TaskId, attempt: u32) -> Option<&mut Phase> {
        let t = self.origin.get_mut(&task)?;
        if t.resolved {
            return None;
        }
        t.attempts.get_mut(&attempt)
    }

    pub(super) fn on_accept(&mut self, from: NodeId, task: TaskId, attempt: u32, cx: Cx) {
        let now = cx.now;
        let mut arbitrate_now = false;
        let wanted = match self.phase_mut(task, attempt) {
            Some(Phase::Offering {
                offered,
                responded,
                accepts,
                arbitrating,
            }) if offered.contains(&from) => {
                responded.insert(from);
                accepts.push((now, from));
                if !*arbitrating {
                    *arbitrating = true;
                    arbitrate_now = true;
                }
                true
            }
            _ => false,
        };
        if !wanted {
            self.send(cx, from, Message::Cancel { task, attempt });
        } else if arbitrate_now {
            // accepts delivered at the same instant are arbitrated together
            cx.set_timer(0.0, Timer::Arbitrate { task, attempt });
        }
    }

    pub(super) fn on_arbitrate(&mut self, task: TaskId, attempt: u32, cx: Cx) {
        let now = cx.now;
        let Some(phase) = self.phase_mut(task, attempt) else {
            return;
        };
        let Phase::Offering { accepts, .. } = phase else { return };
        let Some(winner) = arbitrate(accepts) else { return };
        let losers: Vec<NodeId> = accepts.iter().map(|a| a.1).filter(|n| *n != winner).collect();
        *phase = Phase::Active {
            node: winner,
            since: now,
        };
        self.send(cx, winner, Message::Claim { task, attempt });
        for n in losers {
            self.send(cx, n, Message::Cancel { task, attempt });
        }
        cx.note(Note::Claimed {
            task,
            attempt,
            node: winner,
        });
        self.ensure_supervision(cx);
    }

    pub(super) fn on_reject(&mut self, from: NodeId, task: TaskId, attempt: u32, cx: Cx) {
        let exhausted = match self.phase_mut(task, attempt) {
            Some(Phase::Offering {
                offered,
                responded,
                accepts,
                arbitrating,
            }) => {
                responded.insert(from);
                !*arbitrating && accepts.is_empty() && responded.is_superset(offered)
            }
            _ => false,
        };
        if exhausted {
            self.fallback(task, attempt, cx);
        }
    }

    pub(super) fn on_offer_timeout(&mut self, task: TaskId, attempt: u32, cx: Cx) {
        let waiting = matches!(
            self.phase_mut(task, attempt),
            Some(Phase::Offering { arbitrating: false, .. })
        );
        if waiting {
            self.fallback(task, attempt, cx);
        }
    }

    /// The executor of an attempt gave up on it, or was declared gone.
    pub(super) fn on_attempt_failed(&mut self, from: NodeId, task: TaskId, attempt: u32, cause: ReplaceCause, cx: Cx) {
        let Some(phase) = self.phase_mut(task, attempt) else {
            return;
        };
        if !matches!(phase, Phase::Active { node, .. } if *node == from) {
            return;
        }
        *phase = Phase::Closed;
        let t = self.origin.get_mut(&task).expect("present");
        t.excluded.insert(from);
        let sibling = t.live_attempts().next().is_some();
        cx.note(Note::Replaced {
            task,
            attempt,
            node: from,
            cause,
        });
        if !sibling {
            self.start_attempt(task, &BTreeSet::new(), cx);
        }
    }

    /// Membership declared `node` Dead or Left.
    pub(super) fn origin_member_gone(&mut self, node: NodeId, cause: ReplaceCause, cx: Cx) {
        let mut failed = Vec::new();
        let mut drained = Vec::new();
        for (id, t) in self.origin.iter_mut().filter(|(_, t)| !t.resolved) {
            for (a, phase) in t.attempts.iter_mut() {
                match phase {
                    Phase::Active { node: n, .. } if *n == node => failed.push((*id, *a)),
                    Phase::Offering {
                        offered,
                        responded,
                        accepts,
                        arbitrating,
                    } if offered.contains(&node) => {
                        responded.insert(node);
                        if !*arbitrating && accepts.is_empty() && responded.is_superset(offered) {
                            drained.push((*id, *a));
                        }
                    }
                    _ => {}
                }
            }
        }
        for (task, attempt) in failed {
            self.on_attempt_failed(node, task, attempt, cause, cx);
        }
        for (task, attempt) in drained {
            self.fallback(task, attempt, cx);
        }
    }

    pub(super) fn on_done(&mut self, from: NodeId, task: TaskId, attempt: u32, transfer_time: f64, cx: Cx) {
        let Some(t) = self.origin.get_mut(&task) else { return };
        if t.resolved {
            return;
        }
        t.resolved = true;
        let mut cancel = Vec::new();
        for (a, phase) in t.attempts.iter_mut() {
            if *a != attempt {
                match phase {
                    Phase::Active { node, .. } => cancel.push((*node, *a)),
                    Phase::Offering { accepts, .. } => cancel.extend(accepts.iter().map(|x| (x.1, *a))),
                    Phase::Closed => {}
                }
            }
            *phase = Phase::Closed;
        }
        cx.note(Note::Completed {
            task,
            attempt,
            node: from,
            submitted_at: t.submitted_at,
            deadline_at: t.deadline_at,
            transfer_time,
        });
        for (node, a) in cancel {
            self.cancel_at(node, task, a, cx);
        }
    }

    fn cancel_at(&mut self, node: NodeId, task: TaskId, attempt: u32, cx: Cx) {
        if node == self.me {
            self.on_cancel(task, attempt, cx);
        } else {
            self.send(cx, node, Message::Cancel { task, attempt });
        }
    }

    /// The executor projects a deadline miss: start one speculative attempt
    /// elsewhere and keep whichever finishes first.
    pub(super) fn on_qos_warn(&mut self, from: NodeId, task: TaskId, attempt: u32, cx: Cx) {
        let Some(t) = self.origin.get_mut(&task) else { return };
        let hosted = matches!(t.attempts.get(&attempt), Some(Phase::Active { node, .. }) if *node == from);
        if t.resolved || t.speculated || !hosted {
            return;
        }
        t.speculated = true;
        let avoid = t.hosts();
        let next = t.attempts.len() as u32 + 1;
        cx.note(Note::Speculative { task, attempt: next });
        self.start_attempt(task, &avoid, cx);
    }

    fn supervised_hosts(&self) -> BTreeSet<NodeId> {
        self.origin
            .values()
            .filter(|t| !t.resolved)
            .flat_map(|t| t.hosts())
            .filter(|n| *n != self.me)
            .collect()
    }

    fn ensure_supervision(&mut self, cx: Cx) {
        if !self.supervising {
            self.supervising = true;
            cx.set_timer(self.cfg.supervision_period, Timer::Supervise);
        }
    }

    /// Direct liveness checks on the executors of running attempts, so a
    /// crash is noticed faster than the round-robin probe would.
    pub(super) fn on_supervise(&mut self, cx: Cx) {
        let hosts = self.supervised_hosts();
        if hosts.is_empty() {
            self.supervising = false;
            return;
        }
        for n in hosts {
            if self.membership.view().is_alive(n) {
                self.probe(n, cx);
            }
        }
        cx.set_timer(self.cfg.supervision_period, Timer::Supervise);
    }
}

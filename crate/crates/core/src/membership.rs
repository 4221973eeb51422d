//! Swarm membership: SWIM-style probing with piggybacked gossip.
//!
//! [`Membership`] is a pure per-node state machine. It never sends anything
//! itself; the agent asks it for a probe target, reports timeouts and feeds
//! it the deltas found on incoming envelopes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberStatus {
    Alive,
    Suspect,
    Dead,
    Left,
}

impl MemberStatus {
    /// Precedence at equal incarnation.
    pub fn rank(self) -> u8 {
        match self {
            MemberStatus::Alive => 0,
            MemberStatus::Suspect => 1,
            MemberStatus::Dead => 2,
            MemberStatus::Left => 3,
        }
    }

    /// Not known to be gone.
    pub fn is_live(self) -> bool {
        matches!(self, MemberStatus::Alive | MemberStatus::Suspect)
    }
}

impl fmt::Display for MemberStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MemberStatus::Alive => "alive",
            MemberStatus::Suspect => "suspect",
            MemberStatus::Dead => "dead",
            MemberStatus::Left => "left",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberState {
    pub node: NodeId,
    pub status: MemberStatus,
    pub incarnation: u64,
    pub last_update_time: f64,
}

impl MemberState {
    pub fn alive(node: NodeId, incarnation: u64, now: f64) -> Self {
        Self {
            node,
            status: MemberStatus::Alive,
            incarnation,
            last_update_time: now,
        }
    }

    pub fn precedence(&self) -> (u64, u8) {
        (self.incarnation, self.status.rank())
    }

    /// True when `self` carries strictly newer information than `other`.
    pub fn supersedes(&self, other: &MemberState) -> bool {
        self.precedence() > other.precedence()
    }
}

/// Join of two states for the same node. Equal precedence falls back to the
/// later update time so the operation stays commutative.
pub fn join_member(a: &MemberState, b: &MemberState) -> MemberState {
    match a.precedence().cmp(&b.precedence()) {
        Ordering::Greater => *a,
        Ordering::Less => *b,
        Ordering::Equal => {
            if b.last_update_time.total_cmp(&a.last_update_time) == Ordering::Greater {
                *b
            } else {
                *a
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwarmId(pub NodeId);

impl fmt::Display for SwarmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "swarm-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmView {
    pub swarm_id: SwarmId,
    pub members: BTreeMap<NodeId, MemberState>,
    pub view_version: u64,
}

impl SwarmView {
    pub fn singleton(me: NodeId, incarnation: u64, now: f64) -> Self {
        Self {
            swarm_id: SwarmId(me),
            members: BTreeMap::from([(me, MemberState::alive(me, incarnation, now))]),
            view_version: 0,
        }
    }

    pub fn status(&self, node: NodeId) -> Option<MemberStatus> {
        self.members.get(&node).map(|m| m.status)
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.status(node) == Some(MemberStatus::Alive)
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        self.status(node).is_some_and(MemberStatus::is_live)
    }

    pub fn alive(&self) -> BTreeSet<NodeId> {
        self.with_status(MemberStatus::Alive)
    }

    pub fn with_status(&self, status: MemberStatus) -> BTreeSet<NodeId> {
        self.members
            .values()
            .filter(|m| m.status == status)
            .map(|m| m.node)
            .collect()
    }

    pub fn min_alive(&self) -> Option<NodeId> {
        self.members
            .values()
            .find(|m| m.status == MemberStatus::Alive)
            .map(|m| m.node)
    }

    /// The id this view implies; keeps the current one when nobody is Alive.
    pub fn derived_swarm_id(&self) -> SwarmId {
        self.min_alive().map(SwarmId).unwrap_or(self.swarm_id)
    }
}

/// Minimum Alive id; with nobody Alive, the minimum known id.
pub fn swarm_id_of(members: &BTreeMap<NodeId, MemberState>) -> Option<SwarmId> {
    members
        .values()
        .find(|m| m.status == MemberStatus::Alive)
        .or_else(|| members.values().next())
        .map(|m| SwarmId(m.node))
}

/// Member-wise join. The swarm id is recomputed from the merged members.
pub fn merge_views(a: &SwarmView, b: &SwarmView) -> SwarmView {
    let mut members = a.members.clone();
    for (id, theirs) in &b.members {
        members
            .entry(*id)
            .and_modify(|ours| *ours = join_member(ours, theirs))
            .or_insert(*theirs);
    }
    let swarm_id = swarm_id_of(&members).unwrap_or(a.swarm_id.min(b.swarm_id));
    SwarmView {
        swarm_id,
        members,
        view_version: a.view_version.max(b.view_version),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipConfig {
    pub probe_period: f64,
    pub t_probe: f64,
    pub t_dead: f64,
    pub t_split: f64,
    /// Dead/Left entries are dropped this long after the transition.
    pub retention: f64,
    /// Max deltas per message.
    pub piggyback_limit: usize,
    /// Each delta is sent `retransmit_mult * ceil(log2(n + 1))` times.
    pub retransmit_mult: u32,
}

impl MembershipConfig {
    /// Derives the timers from the expected one-hop round trip.
    pub fn from_rtt(rtt: f64) -> Self {
        let t_probe = 3.0 * rtt;
        Self {
            probe_period: 1.0,
            t_probe,
            t_dead: 4.0 * t_probe,
            t_split: 10.0 * t_probe,
            retention: 30.0,
            piggyback_limit: 8,
            retransmit_mult: 3,
        }
    }
}

/// A status change of one member as seen by this node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub node: NodeId,
    pub from: Option<MemberStatus>,
    pub to: MemberStatus,
    pub incarnation: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApplyOutcome {
    pub transitions: Vec<Transition>,
    /// This node saw itself suspected or declared dead and bumped its
    /// incarnation.
    pub refuted: bool,
}

#[derive(Debug, Clone)]
struct Probe {
    target: NodeId,
    sent_at: f64,
}

#[derive(Debug, Clone)]
pub struct Membership {
    me: NodeId,
    cfg: MembershipConfig,
    view: SwarmView,
    round: u64,
    next_probe: u64,
    outstanding: BTreeMap<u64, Probe>,
    // node -> times its current state has been piggybacked
    gossip: BTreeMap<NodeId, u32>,
    neighbors: BTreeSet<NodeId>,
    // garbage-collected Dead/Left members and the incarnation they had
    tombstones: BTreeMap<NodeId, u64>,
    down_since: BTreeMap<NodeId, f64>,
}

impl Membership {
    pub fn new(me: NodeId, incarnation: u64, cfg: MembershipConfig, now: f64) -> Self {
        let mut m = Self {
            me,
            cfg,
            view: SwarmView::singleton(me, incarnation, now),
            round: 0,
            next_probe: 0,
            outstanding: BTreeMap::new(),
            gossip: BTreeMap::new(),
            neighbors: BTreeSet::new(),
            tombstones: BTreeMap::new(),
            down_since: BTreeMap::new(),
        };
        m.gossip.insert(me, 0);
        m
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn config(&self) -> &MembershipConfig {
        &self.cfg
    }

    pub fn view(&self) -> &SwarmView {
        &self.view
    }

    pub fn swarm_id(&self) -> SwarmId {
        self.view.swarm_id
    }

    pub fn incarnation(&self) -> u64 {
        self.view.members[&self.me].incarnation
    }

    /// Nodes this one has heard from directly and not seen die since.
    pub fn neighbors(&self) -> &BTreeSet<NodeId> {
        &self.neighbors
    }

    pub fn tombstone(&self, node: NodeId) -> Option<u64> {
        self.tombstones.get(&node).copied()
    }

    pub fn gossip_backlog(&self) -> usize {
        self.gossip.len()
    }

    fn retransmit_limit(&self) -> u32 {
        let n = self.view.members.len() as f64;
        self.cfg.retransmit_mult * ((n + 1.0).log2().ceil() as u32).max(1)
    }

    fn touch(&mut self, node: NodeId) {
        self.gossip.insert(node, 0);
        self.view.view_version += 1;
    }

    /// Records direct contact. Unknown senders are not added to the view
    /// here; their state arrives through deltas.
    pub fn heard_from(&mut self, node: NodeId) {
        if node != self.me && self.view.is_live(node) {
            self.neighbors.insert(node);
        }
    }

    /// Round-robin over live neighbours ordered by id, with an offset
    /// derived from this node's id so that probes spread out.
    pub fn next_probe_target(&mut self) -> Option<NodeId> {
        let candidates: Vec<NodeId> = self
            .view
            .members
            .values()
            .filter(|m| m.node != self.me && m.status.is_live() && self.neighbors.contains(&m.node))
            .map(|m| m.node)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let idx = (self.round.wrapping_add(self.me.0)) % candidates.len() as u64;
        self.round += 1;
        Some(candidates[idx as usize])
    }

    /// Registers an outgoing PING and returns its sequence number.
    pub fn start_probe(&mut self, target: NodeId, now: f64) -> u64 {
        let seq = self.next_probe;
        self.next_probe += 1;
        self.outstanding.insert(seq, Probe { target, sent_at: now });
        seq
    }

    /// Returns the probe's round-trip time if it was still outstanding.
    pub fn on_ack(&mut self, seq: u64, from: NodeId, now: f64) -> Option<f64> {
        match self.outstanding.get(&seq) {
            Some(p) if p.target == from => {
                let p = self.outstanding.remove(&seq).expect("present");
                Some(now - p.sent_at)
            }
            _ => None,
        }
    }

    /// An unanswered probe moves an Alive target to Suspect.
    pub fn on_probe_timeout(&mut self, seq: u64, now: f64) -> Option<Transition> {
        let probe = self.outstanding.remove(&seq)?;
        let m = *self.view.members.get(&probe.target)?;
        if m.status != MemberStatus::Alive {
            return None;
        }
        self.set_status(probe.target, MemberStatus::Suspect, m.incarnation, now)
    }

    /// True if `node` is still Suspect at `incarnation`.
    pub fn still_suspect(&self, node: NodeId, incarnation: u64) -> bool {
        self.view
            .members
            .get(&node)
            .is_some_and(|m| m.status == MemberStatus::Suspect && m.incarnation == incarnation)
    }

    pub fn on_suspect_timeout(&mut self, node: NodeId, incarnation: u64, now: f64) -> Option<Transition> {
        if !self.still_suspect(node, incarnation) {
            return None;
        }
        self.set_status(node, MemberStatus::Dead, incarnation, now)
    }

    /// Expires suspicions learned through gossip and garbage-collects old
    /// Dead/Left entries into tombstones.
    pub fn sweep(&mut self, now: f64) -> (Vec<Transition>, Vec<NodeId>) {
        let eps = 1e-9;
        let expired: Vec<(NodeId, u64)> = self
            .view
            .members
            .values()
            .filter(|m| m.status == MemberStatus::Suspect && now - m.last_update_time >= self.cfg.t_dead - eps)
            .map(|m| (m.node, m.incarnation))
            .collect();
        let mut out = Vec::new();
        for (node, inc) in expired {
            out.extend(self.set_status(node, MemberStatus::Dead, inc, now));
        }
        let gone: Vec<NodeId> = self
            .view
            .members
            .values()
            .filter(|m| m.node != self.me)
            .filter(|m| !m.status.is_live() && now - m.last_update_time >= self.cfg.retention)
            .map(|m| m.node)
            .collect();
        for node in &gone {
            let m = self.view.members.remove(node).expect("present");
            self.tombstones.insert(*node, m.incarnation);
            self.gossip.remove(node);
            self.down_since.remove(node);
            self.view.view_version += 1;
        }
        (out, gone)
    }

    fn set_status(&mut self, node: NodeId, to: MemberStatus, incarnation: u64, now: f64) -> Option<Transition> {
        let prev = self.view.members.get(&node).copied();
        let next = MemberState {
            node,
            status: to,
            incarnation,
            last_update_time: now,
        };
        self.view.members.insert(node, next);
        self.touch(node);
        self.track(node, prev.map(|p| p.status), to, now);
        if prev.map(|p| p.status) == Some(to) {
            return None;
        }
        Some(Transition {
            node,
            from: prev.map(|p| p.status),
            to,
            incarnation,
        })
    }

    fn track(&mut self, node: NodeId, from: Option<MemberStatus>, to: MemberStatus, now: f64) {
        match to {
            MemberStatus::Alive => {
                self.down_since.remove(&node);
            }
            MemberStatus::Suspect | MemberStatus::Dead => {
                if from != Some(MemberStatus::Suspect) && from != Some(MemberStatus::Dead) {
                    self.down_since.insert(node, now);
                }
                if to == MemberStatus::Dead {
                    self.neighbors.remove(&node);
                }
            }
            MemberStatus::Left => {
                self.down_since.remove(&node);
                self.neighbors.remove(&node);
            }
        }
    }

    /// Applies gossiped member states. Newer information is installed and
    /// queued for further dissemination.
    pub fn apply_deltas(&mut self, deltas: &[MemberState], now: f64) -> ApplyOutcome {
        let mut out = ApplyOutcome::default();
        for d in deltas {
            if d.node == self.me {
                let mine = self.view.members[&self.me];
                if d.status != MemberStatus::Alive
                    && mine.status == MemberStatus::Alive
                    && d.incarnation >= mine.incarnation
                {
                    let inc = d.incarnation + 1;
                    self.view.members.insert(self.me, MemberState::alive(self.me, inc, now));
                    self.touch(self.me);
                    out.refuted = true;
                }
                continue;
            }
            if let Some(&k) = self.tombstones.get(&d.node) {
                if d.incarnation <= k {
                    if d.status == MemberStatus::Alive {
                        // someone still believes in a collected member: put
                        // the death back into circulation so it can refute
                        self.tombstones.remove(&d.node);
                        self.view.members.insert(
                            d.node,
                            MemberState {
                                node: d.node,
                                status: MemberStatus::Dead,
                                incarnation: k,
                                last_update_time: now,
                            },
                        );
                        self.touch(d.node);
                    }
                    continue;
                }
            }
            let current = self.view.members.get(&d.node).copied();
            let newer = match current {
                None => true,
                Some(c) => d.supersedes(&c),
            };
            if !newer {
                continue;
            }
            self.tombstones.remove(&d.node);
            let prev_status = current.map(|c| c.status);
            self.view.members.insert(
                d.node,
                MemberState {
                    last_update_time: now,
                    ..*d
                },
            );
            self.touch(d.node);
            self.track(d.node, prev_status, d.status, now);
            if prev_status != Some(d.status) {
                out.transitions.push(Transition {
                    node: d.node,
                    from: prev_status,
                    to: d.status,
                    incarnation: d.incarnation,
                });
            }
        }
        out
    }

    /// Merges a full view received from a peer (HELLO-ACK), then
    /// recomputes the swarm id.
    pub fn merge_view(&mut self, other: &SwarmView, now: f64) -> ApplyOutcome {
        let deltas: Vec<MemberState> = other.members.values().copied().collect();
        let out = self.apply_deltas(&deltas, now);
        self.view.swarm_id = self.view.derived_swarm_id();
        out
    }

    /// Called when a message carries a different swarm id: the two swarms
    /// are meeting, so the id is recomputed from the current members.
    /// Returns the new id if it changed.
    pub fn observe_swarm(&mut self, other: SwarmId) -> Option<SwarmId> {
        if other == self.view.swarm_id {
            return None;
        }
        self.recompute_swarm_id()
    }

    fn recompute_swarm_id(&mut self) -> Option<SwarmId> {
        let next = self.view.derived_swarm_id();
        if next == self.view.swarm_id {
            return None;
        }
        self.view.swarm_id = next;
        self.view.view_version += 1;
        Some(next)
    }

    /// Partition-driven split: once at least half of the members have been
    /// unreachable for longer than the split timeout, the id is recomputed
    /// over the residual Alive set.
    pub fn split_detect(&mut self, now: f64) -> Option<SwarmId> {
        let total = self
            .view
            .members
            .values()
            .filter(|m| m.status != MemberStatus::Left)
            .count();
        let down = self
            .down_since
            .iter()
            .filter(|(n, since)| self.view.members.contains_key(n) && now - **since > self.cfg.t_split)
            .count();
        if total == 0 || 2 * down < total {
            return None;
        }
        self.recompute_swarm_id()
    }

    /// Graceful departure: announces Left at the current incarnation.
    pub fn leave(&mut self, now: f64) {
        let inc = self.incarnation();
        self.view.members.insert(
            self.me,
            MemberState {
                node: self.me,
                status: MemberStatus::Left,
                incarnation: inc,
                last_update_time: now,
            },
        );
        self.touch(self.me);
    }

    /// Deltas to piggyback on a message to `recipient`. A suspicion about
    /// the recipient (or a death notice) goes first so it can refute it
    /// immediately.
    pub fn piggyback(&mut self, recipient: Option<NodeId>) -> Vec<MemberState> {
        let limit = self.cfg.piggyback_limit;
        let max_tx = self.retransmit_limit();
        let mut out = Vec::with_capacity(limit);
        if let Some(r) = recipient {
            if let Some(m) = self.view.members.get(&r) {
                if matches!(m.status, MemberStatus::Suspect | MemberStatus::Dead) {
                    out.push(*m);
                }
            }
        }
        let mut queue: Vec<(u32, NodeId)> = self
            .gossip
            .iter()
            .filter(|(n, _)| Some(**n) != recipient)
            .map(|(n, c)| (*c, *n))
            .collect();
        queue.sort_unstable();
        for (_, node) in queue {
            if out.len() >= limit {
                break;
            }
            let Some(m) = self.view.members.get(&node) else {
                self.gossip.remove(&node);
                continue;
            };
            out.push(*m);
            let c = self.gossip.get_mut(&node).expect("queued");
            *c += 1;
            if *c >= max_tx {
                self.gossip.remove(&node);
            }
        }
        out
    }
}

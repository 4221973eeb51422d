//! Deterministic discrete-event simulation of a radio mesh.
//!
//! The engine owns virtual time, node physics (position, battery, up/down)
//! and the message transport. Node behaviour lives behind [`Process`]:
//! a handler receives one event, mutates its own state and returns
//! outgoing messages, timers and notes through [`Ctx`]. Handlers never see
//! each other's state.

mod net;
pub mod rng;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use net::{NetModel, PartitionWindow};
pub use rng::RngState;
pub use trace::{Trace, TraceRecord};

use crate::model::{distance, Battery, NodeId, Position};

/// Behaviour of one simulated node.
pub trait Process {
    type Timer: Clone + fmt::Debug;
    type Input: Clone + fmt::Debug;
    type Note: fmt::Debug + Serialize;
    /// State that survives a crash (stable storage).
    type Stable: Clone;

    fn handle(&mut self, event: Incoming<'_, Self::Timer, Self::Input>, cx: &mut Ctx<'_, Self>) -> Result<(), Fault>
    where
        Self: Sized;

    fn stable(&self) -> Self::Stable;
}

/// What a process is woken up with.
#[derive(Debug)]
pub enum Incoming<'a, T, I> {
    Boot,
    Message {
        from: NodeId,
        bytes: &'a [u8],
    },
    Timer(T),
    Input(I),
    /// Graceful departure: last chance to send messages.
    Leave,
    Moved(Position),
    Battery(Battery),
}

/// Internal fault raised by a handler; aborts the run.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct Fault(pub String);

pub struct Outgoing {
    pub to: Option<NodeId>,
    pub label: &'static str,
    pub bytes: Vec<u8>,
}

pub struct Effects<P: Process> {
    pub sends: Vec<Outgoing>,
    pub timers: Vec<(f64, P::Timer)>,
    pub notes: Vec<P::Note>,
}

impl<P: Process> Default for Effects<P> {
    fn default() -> Self {
        Self {
            sends: Vec::new(),
            timers: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// Handler context: read-only physics plus effect collectors.
pub struct Ctx<'a, P: Process> {
    pub now: f64,
    pub me: NodeId,
    pub position: Position,
    pub battery: Battery,
    pub effects: &'a mut Effects<P>,
}

impl<P: Process> Ctx<'_, P> {
    pub fn send(&mut self, to: NodeId, label: &'static str, bytes: Vec<u8>) {
        self.effects.sends.push(Outgoing {
            to: Some(to),
            label,
            bytes,
        });
    }

    /// Radio broadcast to every node currently in range.
    pub fn broadcast(&mut self, label: &'static str, bytes: Vec<u8>) {
        self.effects.sends.push(Outgoing { to: None, label, bytes });
    }

    pub fn set_timer(&mut self, delay: f64, timer: P::Timer) {
        debug_assert!(delay >= 0.0, "negative timer delay");
        self.effects.timers.push((delay.max(0.0), timer));
    }

    pub fn note(&mut self, note: P::Note) {
        self.effects.notes.push(note);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChurnKind {
    Join,
    Leave,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub time: f64,
    pub node: NodeId,
    pub kind: ChurnKind,
}

/// Scheduled joins, departures and crashes. Each event time is shifted by
/// a uniform draw in `[0, jitter)` from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ChurnSchedule {
    #[serde(default)]
    pub events: Vec<ChurnEvent>,
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    OutOfRange,
    Partition,
    Loss,
    DestinationDown,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::OutOfRange => "out-of-range",
            DropReason::Partition => "partition",
            DropReason::Loss => "loss",
            DropReason::DestinationDown => "dest-down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SendOutcome {
    Delivery { at: f64, msg_id: u64 },
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashCause {
    Scheduled,
    BatteryDepleted,
}

/// Lifecycle transitions observed by the engine, for the experiment driver.
#[derive(Debug, Clone, PartialEq)]
pub enum Lifecycle {
    Joined { t: f64, node: NodeId },
    Left { t: f64, node: NodeId },
    Crashed { t: f64, node: NodeId, cause: CrashCause },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("partition groups overlap on node {0}")]
    OverlappingGroups(NodeId),
    #[error("partition window must satisfy start < end (got {start}..{end})")]
    InvalidWindow { start: f64, end: f64 },
    #[error("event time {0} is in the past")]
    PastEvent(f64),
    #[error("handler fault at t={time} while processing {event}: {fault}")]
    Fault { time: f64, event: String, fault: Fault },
}

#[derive(Debug, Clone)]
enum Payload<T, I> {
    MessageDelivery {
        from: NodeId,
        to: NodeId,
        msg_id: u64,
        label: &'static str,
        bytes: Vec<u8>,
        sent_at: f64,
    },
    NodeJoin(NodeId),
    NodeLeave(NodeId),
    NodeCrash(NodeId, CrashCause),
    TimerFire {
        node: NodeId,
        epoch: u64,
        timer: T,
    },
    PartitionStart(usize),
    PartitionEnd(usize),
    BatteryTick {
        node: NodeId,
        epoch: u64,
    },
    MoveStep(NodeId, Position),
    Inject(NodeId, I),
}

/// A queued event. Ordered by `(time, seq)`; `seq` is unique per run.
struct SimEvent<T, I> {
    time: f64,
    seq: u64,
    payload: Payload<T, I>,
}

impl<T, I> PartialEq for SimEvent<T, I> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl<T, I> Eq for SimEvent<T, I> {}
impl<T, I> PartialOrd for SimEvent<T, I> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T, I> Ord for SimEvent<T, I> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Physical description of a node, fixed at scenario load.
#[derive(Debug, Clone)]
pub struct NodeSetup {
    pub id: NodeId,
    pub position: Position,
    pub battery: Battery,
    pub drain_rate: f64,
}

struct Slot<P: Process> {
    position: Position,
    battery: Battery,
    drain_rate: f64,
    process: Option<P>,
    stable: Option<P::Stable>,
    epoch: u64,
}

/// Message accounting. `sent = delivered + dropped + in_flight` always.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<&'static str, u64>,
    pub by_label: BTreeMap<&'static str, u64>,
}

impl MessageCounters {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }
}

pub type Factory<P> = Box<dyn FnMut(NodeId, Option<<P as Process>::Stable>) -> P>;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub net: NetModel,
    pub seed: u64,
    /// Battery drain is applied in steps of this many seconds.
    pub battery_tick: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            net: NetModel::default(),
            seed: 0,
            battery_tick: 1.0,
        }
    }
}

pub struct Simulation<P: Process> {
    now: f64,
    seq: u64,
    msg_seq: u64,
    queue: BinaryHeap<SimEvent<P::Timer, P::Input>>,
    nodes: BTreeMap<NodeId, Slot<P>>,
    config: SimConfig,
    partitions: Vec<PartitionWindow>,
    rng: RngState,
    trace: Trace,
    counters: MessageCounters,
    in_flight: u64,
    notes: Vec<(f64, NodeId, P::Note)>,
    lifecycle: Vec<Lifecycle>,
    tap: Option<Vec<Sent>>,
    factory: Factory<P>,
}

/// A message as handed to the transport, kept when the tap is on.
#[derive(Debug, Clone, PartialEq)]
pub struct Sent {
    pub t: f64,
    pub from: NodeId,
    pub to: NodeId,
    pub label: &'static str,
    pub bytes: Vec<u8>,
}

impl<P: Process> Simulation<P>
where
    P::Timer: fmt::Debug,
{
    pub fn new(config: SimConfig, trace: Trace, factory: Factory<P>) -> Self {
        let rng = RngState::new(config.seed);
        Self {
            now: 0.0,
            seq: 0,
            msg_seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            config,
            partitions: Vec::new(),
            rng,
            trace,
            counters: MessageCounters::default(),
            in_flight: 0,
            notes: Vec::new(),
            lifecycle: Vec::new(),
            tap: None,
            factory,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn net(&self) -> &NetModel {
        &self.config.net
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    /// Starts keeping a copy of every message sent from now on.
    pub fn tap_messages(&mut self) {
        self.tap.get_or_insert_with(Vec::new);
    }

    pub fn drain_tap(&mut self) -> Vec<Sent> {
        self.tap.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn counters(&self) -> &MessageCounters {
        &self.counters
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn rng(&mut self) -> &mut RngState {
        &mut self.rng
    }

    pub fn add_node(&mut self, setup: NodeSetup) {
        self.nodes.insert(
            setup.id,
            Slot {
                position: setup.position,
                battery: setup.battery,
                drain_rate: setup.drain_rate,
                process: None,
                stable: None,
                epoch: 0,
            },
        );
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn is_up(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|s| s.process.is_some())
    }

    pub fn position(&self, node: NodeId) -> Option<Position> {
        self.nodes.get(&node).map(|s| s.position)
    }

    pub fn battery(&self, node: NodeId) -> Option<Battery> {
        self.nodes.get(&node).map(|s| s.battery)
    }

    pub fn process(&self, node: NodeId) -> Option<&P> {
        self.nodes.get(&node).and_then(|s| s.process.as_ref())
    }

    /// Running processes in NodeId order.
    pub fn processes(&self) -> impl Iterator<Item = (NodeId, &P)> + '_ {
        self.nodes
            .iter()
            .filter_map(|(id, s)| s.process.as_ref().map(|p| (*id, p)))
    }

    pub fn drain_notes(&mut self) -> Vec<(f64, NodeId, P::Note)> {
        std::mem::take(&mut self.notes)
    }

    pub fn drain_lifecycle(&mut self) -> Vec<Lifecycle> {
        std::mem::take(&mut self.lifecycle)
    }

    fn require(&self, node: NodeId) -> Result<(), SimError> {
        if self.nodes.contains_key(&node) {
            Ok(())
        } else {
            Err(SimError::UnknownNode(node))
        }
    }

    fn push(&mut self, time: f64, payload: Payload<P::Timer, P::Input>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(SimEvent { time, seq, payload });
    }

    fn check_time(&self, t: f64) -> Result<(), SimError> {
        if t.is_finite() && t >= self.now {
            Ok(())
        } else {
            Err(SimError::PastEvent(t))
        }
    }

    pub fn schedule_join(&mut self, t: f64, node: NodeId) -> Result<(), SimError> {
        self.require(node)?;
        self.check_time(t)?;
        self.push(t, Payload::NodeJoin(node));
        Ok(())
    }

    pub fn schedule_leave(&mut self, t: f64, node: NodeId) -> Result<(), SimError> {
        self.require(node)?;
        self.check_time(t)?;
        self.push(t, Payload::NodeLeave(node));
        Ok(())
    }

    pub fn schedule_crash(&mut self, t: f64, node: NodeId) -> Result<(), SimError> {
        self.require(node)?;
        self.check_time(t)?;
        self.push(t, Payload::NodeCrash(node, CrashCause::Scheduled));
        Ok(())
    }

    pub fn schedule_move(&mut self, t: f64, node: NodeId, to: Position) -> Result<(), SimError> {
        self.require(node)?;
        self.check_time(t)?;
        self.push(t, Payload::MoveStep(node, to));
        Ok(())
    }

    pub fn schedule_input(&mut self, t: f64, node: NodeId, input: P::Input) -> Result<(), SimError> {
        self.require(node)?;
        self.check_time(t)?;
        self.push(t, Payload::Inject(node, input));
        Ok(())
    }

    /// Queues every churn event, shifted by its seeded jitter.
    pub fn schedule_churn(&mut self, churn: &ChurnSchedule) -> Result<(), SimError> {
        for ev in &churn.events {
            self.require(ev.node)?;
            let jitter = if churn.jitter > 0.0 {
                churn.jitter * self.rng.uniform("churn", ev.node)
            } else {
                0.0
            };
            let t = ev.time + jitter;
            self.check_time(t)?;
            let payload = match ev.kind {
                ChurnKind::Join => Payload::NodeJoin(ev.node),
                ChurnKind::Leave => Payload::NodeLeave(ev.node),
                ChurnKind::Crash => Payload::NodeCrash(ev.node, CrashCause::Scheduled),
            };
            self.push(t, payload);
        }
        Ok(())
    }

    /// Cuts traffic between two disjoint groups during `[start, end)`.
    pub fn inject_partition(
        &mut self,
        group_a: impl IntoIterator<Item = NodeId>,
        group_b: impl IntoIterator<Item = NodeId>,
        start: f64,
        end: f64,
    ) -> Result<(), SimError> {
        let window = PartitionWindow {
            group_a: group_a.into_iter().collect(),
            group_b: group_b.into_iter().collect(),
            start,
            end,
        };
        if !start.is_finite() || !end.is_finite() || start >= end {
            return Err(SimError::InvalidWindow { start, end });
        }
        if let Some(n) = window.group_a.intersection(&window.group_b).next() {
            return Err(SimError::OverlappingGroups(*n));
        }
        for n in window.group_a.iter().chain(&window.group_b) {
            self.require(*n)?;
        }
        let idx = self.partitions.len();
        self.partitions.push(window);
        self.push(start.max(self.now), Payload::PartitionStart(idx));
        self.push(end.max(self.now), Payload::PartitionEnd(idx));
        Ok(())
    }

    /// True if an active partition window separates `a` and `b` at time `t`.
    pub fn partitioned(&self, a: NodeId, b: NodeId, t: f64) -> bool {
        self.partitions.iter().any(|w| w.is_active(t) && w.separates(a, b))
    }

    /// Nodes that would hear a broadcast from `node` right now: up, in
    /// radio range, not partitioned away.
    pub fn reachable(&self, node: NodeId) -> Vec<NodeId> {
        let Some(me) = self.nodes.get(&node) else {
            return Vec::new();
        };
        self.nodes
            .iter()
            .filter(|(id, s)| {
                **id != node
                    && s.process.is_some()
                    && distance(me.position, s.position) <= self.config.net.radio_range
                    && !self.partitioned(node, **id, self.now)
            })
            .map(|(id, _)| *id)
            .collect()
    }

    /// Sends one message through the transport. Either schedules a
    /// delivery at `now + base + per_meter * distance` or records a drop.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Vec<u8>, now: f64) -> Result<SendOutcome, SimError> {
        self.require(from)?;
        self.require(to)?;
        Ok(self.transmit(from, to, "raw", msg, now))
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, label: &'static str, bytes: Vec<u8>, now: f64) -> SendOutcome {
        let msg_id = self.msg_seq;
        self.msg_seq += 1;
        self.counters.sent += 1;
        *self.counters.by_label.entry(label).or_default() += 1;
        if let Some(tap) = self.tap.as_mut() {
            tap.push(Sent {
                t: now,
                from,
                to,
                label,
                bytes: bytes.clone(),
            });
        }
        let (pa, pb) = (self.nodes[&from].position, self.nodes[&to].position);
        let dist = distance(pa, pb);
        let reason = if dist > self.config.net.radio_range {
            Some(DropReason::OutOfRange)
        } else if self.partitioned(from, to, now) {
            Some(DropReason::Partition)
        } else if self.config.net.loss_prob > 0.0 && self.rng.uniform("loss", from) < self.config.net.loss_prob {
            Some(DropReason::Loss)
        } else {
            None
        };
        if let Some(reason) = reason {
            self.record_drop(from, to, msg_id, label, &bytes, now, reason);
            return SendOutcome::Dropped(reason);
        }
        let at = now + self.config.net.latency(dist);
        self.in_flight += 1;
        self.push(
            at,
            Payload::MessageDelivery {
                from,
                to,
                msg_id,
                label,
                bytes,
                sent_at: now,
            },
        );
        SendOutcome::Delivery { at, msg_id }
    }

    #[allow(clippy::too_many_arguments)]
    fn record_drop(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg_id: u64,
        label: &'static str,
        bytes: &[u8],
        t: f64,
        reason: DropReason,
    ) {
        *self.counters.dropped.entry(reason.as_str()).or_default() += 1;
        let mut rec = TraceRecord::new(t, self.seq, "drop")
            .node(from.0)
            .peer(to.0)
            .label(label)
            .reason(reason.as_str());
        rec.msg_id = Some(msg_id);
        rec.digest = Some(format!("{:016x}", rng::fnv1a64(bytes)));
        self.trace.record(&rec);
    }

    /// Applies linear drain to a battery-constrained node. Reaching zero
    /// queues a crash at the current time; mains nodes are unaffected.
    pub fn battery_step(&mut self, node: NodeId, dt: f64) -> Result<Battery, SimError> {
        let now = self.now;
        let slot = self.nodes.get_mut(&node).ok_or(SimError::UnknownNode(node))?;
        let Battery::Level(level) = slot.battery else {
            return Ok(Battery::Mains);
        };
        let next = (level - slot.drain_rate * dt).max(0.0);
        slot.battery = Battery::Level(next);
        if next <= 0.0 && level > 0.0 {
            self.push(now, Payload::NodeCrash(node, CrashCause::BatteryDepleted));
        }
        Ok(Battery::Level(next))
    }

    /// Processes every event with `time <= t_end` in `(time, seq)` order.
    /// Returns the number of events processed.
    pub fn run_until(&mut self, t_end: f64) -> Result<u64, SimError> {
        let mut processed = 0;
        while self.queue.peek().is_some_and(|e| e.time <= t_end) {
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.dispatch(ev)?;
            processed += 1;
        }
        if t_end.is_finite() && t_end > self.now {
            self.now = t_end;
        }
        Ok(processed)
    }

    fn dispatch(&mut self, ev: SimEvent<P::Timer, P::Input>) -> Result<(), SimError> {
        let (t, seq) = (ev.time, ev.seq);
        match ev.payload {
            Payload::MessageDelivery {
                from,
                to,
                msg_id,
                label,
                bytes,
                sent_at,
            } => {
                self.in_flight -= 1;
                let digest = format!("{:016x}", rng::fnv1a64(&bytes));
                if !self.is_up(to) {
                    *self
                        .counters
                        .dropped
                        .entry(DropReason::DestinationDown.as_str())
                        .or_default() += 1;
                    let mut rec = TraceRecord::new(t, seq, "drop")
                        .node(from.0)
                        .peer(to.0)
                        .label(label)
                        .reason(DropReason::DestinationDown.as_str());
                    rec.msg_id = Some(msg_id);
                    rec.sent_at = Some(sent_at);
                    rec.digest = Some(digest);
                    self.trace.record(&rec);
                    return Ok(());
                }
                self.counters.delivered += 1;
                let mut rec = TraceRecord::new(t, seq, "deliver").node(to.0).peer(from.0).label(label);
                rec.msg_id = Some(msg_id);
                rec.sent_at = Some(sent_at);
                rec.digest = Some(digest);
                self.trace.record(&rec);
                self.invoke(to, Incoming::Message { from, bytes: &bytes }, || {
                    format!("MessageDelivery#{msg_id} {label} {from}->{to}")
                })
            }
            Payload::NodeJoin(node) => {
                let slot = self.nodes.get_mut(&node).expect("validated at schedule time");
                if slot.process.is_some() || slot.battery.is_depleted() {
                    self.trace
                        .record(&TraceRecord::new(t, seq, "join-ignored").node(node.0));
                    return Ok(());
                }
                let stable = slot.stable.clone();
                let process = (self.factory)(node, stable);
                let slot = self.nodes.get_mut(&node).expect("present");
                slot.process = Some(process);
                slot.epoch += 1;
                let epoch = slot.epoch;
                let battery_constrained = !slot.battery.is_mains();
                self.trace.record(&TraceRecord::new(t, seq, "join").node(node.0));
                self.lifecycle.push(Lifecycle::Joined { t, node });
                if battery_constrained {
                    let tick = self.config.battery_tick;
                    self.push(t + tick, Payload::BatteryTick { node, epoch });
                }
                self.invoke(node, Incoming::Boot, || format!("NodeJoin {node}"))
            }
            Payload::NodeLeave(node) => {
                if !self.is_up(node) {
                    self.trace
                        .record(&TraceRecord::new(t, seq, "leave-ignored").node(node.0));
                    return Ok(());
                }
                self.trace.record(&TraceRecord::new(t, seq, "leave").node(node.0));
                self.invoke(node, Incoming::Leave, || format!("NodeLeave {node}"))?;
                self.take_down(node);
                self.lifecycle.push(Lifecycle::Left { t, node });
                Ok(())
            }
            Payload::NodeCrash(node, cause) => {
                if !self.is_up(node) {
                    self.trace
                        .record(&TraceRecord::new(t, seq, "crash-ignored").node(node.0));
                    return Ok(());
                }
                let reason = match cause {
                    CrashCause::Scheduled => "scheduled",
                    CrashCause::BatteryDepleted => "battery-depleted",
                };
                self.trace
                    .record(&TraceRecord::new(t, seq, "crash").node(node.0).reason(reason));
                self.take_down(node);
                self.lifecycle.push(Lifecycle::Crashed { t, node, cause });
                Ok(())
            }
            Payload::TimerFire { node, epoch, timer } => {
                let live = self
                    .nodes
                    .get(&node)
                    .is_some_and(|s| s.process.is_some() && s.epoch == epoch);
                if !live {
                    self.trace.record(&TraceRecord::new(t, seq, "timer-stale").node(node.0));
                    return Ok(());
                }
                self.trace.record(
                    &TraceRecord::new(t, seq, "timer")
                        .node(node.0)
                        .label(format!("{timer:?}")),
                );
                let desc = format!("{timer:?}");
                self.invoke(node, Incoming::Timer(timer), || format!("TimerFire {node} {desc}"))
            }
            Payload::PartitionStart(idx) | Payload::PartitionEnd(idx) => {
                let start = matches!(ev.payload, Payload::PartitionStart(_));
                let w = &self.partitions[idx];
                let mut rec = TraceRecord::new(t, seq, if start { "partition-start" } else { "partition-end" });
                rec.detail = Some(serde_json::json!({
                    "window": idx,
                    "group_a": w.group_a.iter().map(|n| n.0).collect::<Vec<_>>(),
                    "group_b": w.group_b.iter().map(|n| n.0).collect::<Vec<_>>(),
                }));
                self.trace.record(&rec);
                Ok(())
            }
            Payload::BatteryTick { node, epoch } => {
                let live = self
                    .nodes
                    .get(&node)
                    .is_some_and(|s| s.process.is_some() && s.epoch == epoch);
                if !live {
                    return Ok(());
                }
                let level = self.battery_step(node, self.config.battery_tick)?;
                let mut rec = TraceRecord::new(t, seq, "battery").node(node.0);
                rec.detail = level.level().map(|l| serde_json::json!(l));
                self.trace.record(&rec);
                if !level.is_depleted() {
                    let tick = self.config.battery_tick;
                    self.push(t + tick, Payload::BatteryTick { node, epoch });
                }
                self.invoke(node, Incoming::Battery(level), || format!("BatteryTick {node}"))
            }
            Payload::MoveStep(node, to) => {
                self.nodes.get_mut(&node).expect("validated").position = to;
                let mut rec = TraceRecord::new(t, seq, "move").node(node.0);
                rec.detail = Some(serde_json::json!([to.x, to.y]));
                self.trace.record(&rec);
                if self.is_up(node) {
                    self.invoke(node, Incoming::Moved(to), || format!("MoveStep {node}"))
                } else {
                    Ok(())
                }
            }
            Payload::Inject(node, input) => {
                if !self.is_up(node) {
                    let mut rec = TraceRecord::new(t, seq, "inject-ignored").node(node.0);
                    rec.label = Some(format!("{input:?}"));
                    self.trace.record(&rec);
                    return Ok(());
                }
                self.trace.record(&TraceRecord::new(t, seq, "inject").node(node.0));
                let desc = format!("{input:?}");
                self.invoke(node, Incoming::Input(input), || format!("Inject {node} {desc}"))
            }
        }
    }

    fn take_down(&mut self, node: NodeId) {
        let slot = self.nodes.get_mut(&node).expect("present");
        if let Some(p) = slot.process.take() {
            slot.stable = Some(p.stable());
        }
        slot.epoch += 1;
    }

    fn invoke(
        &mut self,
        node: NodeId,
        event: Incoming<'_, P::Timer, P::Input>,
        describe: impl FnOnce() -> String,
    ) -> Result<(), SimError> {
        let now = self.now;
        let slot = self.nodes.get_mut(&node).expect("present");
        let Some(mut process) = slot.process.take() else {
            return Ok(());
        };
        let (position, battery, epoch) = (slot.position, slot.battery, slot.epoch);
        let mut effects = Effects::<P>::default();
        let result = {
            let mut cx = Ctx {
                now,
                me: node,
                position,
                battery,
                effects: &mut effects,
            };
            process.handle(event, &mut cx)
        };
        self.nodes.get_mut(&node).expect("present").process = Some(process);
        if let Err(fault) = result {
            let mut rec = TraceRecord::new(now, self.seq, "abort").node(node.0);
            rec.reason = Some(fault.0.clone());
            self.trace.record(&rec);
            let _ = self.trace.flush();
            return Err(SimError::Fault {
                time: now,
                event: describe(),
                fault,
            });
        }
        self.apply(node, epoch, effects);
        Ok(())
    }

    fn apply(&mut self, node: NodeId, epoch: u64, effects: Effects<P>) {
        let now = self.now;
        for note in effects.notes {
            let mut rec = TraceRecord::new(now, self.seq, "note").node(node.0);
            rec.detail = Some(serde_json::to_value(&note).expect("notes serialize"));
            self.trace.record(&rec);
            self.notes.push((now, node, note));
        }
        for out in effects.sends {
            match out.to {
                Some(to) => {
                    self.transmit(node, to, out.label, out.bytes, now);
                }
                None => {
                    let me = self.nodes[&node].position;
                    let range = self.config.net.radio_range;
                    let targets: Vec<NodeId> = self
                        .nodes
                        .iter()
                        .filter(|(id, s)| **id != node && s.process.is_some() && distance(me, s.position) <= range)
                        .map(|(id, _)| *id)
                        .collect();
                    for to in targets {
                        self.transmit(node, to, out.label, out.bytes.clone(), now);
                    }
                }
            }
        }
        for (delay, timer) in effects.timers {
            self.push(now + delay, Payload::TimerFire { node, epoch, timer });
        }
    }
}

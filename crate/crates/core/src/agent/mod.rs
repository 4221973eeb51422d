//! The per-node agent: one [`Process`] that composes membership, registry,
//! catalog, predictors, origin-side scheduling and the local executor.

mod origin;
mod worker;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cognition::{forecast_load, LoadForecast, SessionTracker, DEFAULT_EPSILON};
use crate::dataplane::{Catalog, DataAnnouncement, Replication};
use crate::executor::{Executor, RunKey};
use crate::membership::{ApplyOutcome, MemberStatus, Membership, MembershipConfig, SwarmId, Transition};
use crate::model::{Battery, DataSourceId, NodeId, NodeProfile, Position, TaskId, TaskSpec};
use crate::registry::Registry;
use crate::scheduler::{CandidateInputs, SchedulerParams, Weights};
use crate::sim::rng::{splitmix64, substream_key};
use crate::sim::{Ctx, Fault, Incoming, NetModel, Process};
use crate::wire::{self, Envelope, FailCause, Message};

pub use origin::OriginTask;

/// Protocol timing and policy shared by all agents of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub net: NetModel,
    pub membership: MembershipConfig,
    pub scheduler: SchedulerParams,
    pub alpha: f64,
    pub epsilon: f64,
    pub anti_entropy_period: f64,
    pub discovery_period: f64,
    pub executor_tick: f64,
    /// Origins ping the executors of their running tasks this often.
    pub supervision_period: f64,
    /// How long an origin waits for answers to its offers; also the
    /// lifetime of an unclaimed reservation.
    pub offer_timeout: f64,
    pub retry_delay: f64,
}

impl AgentConfig {
    pub fn new(net: NetModel, scheduler: SchedulerParams, alpha: f64, epsilon: f64) -> Self {
        let membership = MembershipConfig::from_rtt(net.expected_rtt());
        let p = membership.probe_period;
        let t_probe = membership.t_probe;
        Self {
            net,
            membership,
            scheduler,
            alpha,
            epsilon,
            anti_entropy_period: 2.0 * p,
            discovery_period: 4.0 * p,
            executor_tick: 0.1,
            supervision_period: p / 2.0,
            offer_timeout: 2.0 * t_probe,
            retry_delay: p,
        }
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::new(NetModel::default(), SchedulerParams::default(), 0.3, DEFAULT_EPSILON)
    }
}

/// Static description of a node handed to its agent at every boot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub profile: NodeProfile,
    /// Sources this node owns and announces.
    pub owned: Vec<DataAnnouncement>,
    pub background_load: f64,
}

/// Survives crashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AgentStable {
    pub incarnation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Input {
    Submit(TaskSpec),
    Replicate(DataSourceId),
    SetBackgroundLoad(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    Probe,
    ProbeTimeout { seq: u64 },
    SuspectTimeout { node: NodeId, incarnation: u64 },
    SuspectPing { node: NodeId, incarnation: u64 },
    Discover,
    AntiEntropy,
    ExecTick,
    Completion { epoch: u64 },
    ReservationExpiry(RunKey),
    StartRun(RunKey),
    OfferTimeout { task: TaskId, attempt: u32 },
    Arbitrate { task: TaskId, attempt: u32 },
    Retry { task: TaskId },
    Supervise,
    ReplicationTimeout { source: DataSourceId, epoch: u64 },
    SendData { to: NodeId, source: DataSourceId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplaceCause {
    MemberDead,
    MemberLeft,
    Nack,
    Failed,
    DataUnavailable,
}

/// Everything the data for one placement decision needs to be re-derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub task: TaskId,
    pub attempt: u32,
    /// Time left until the deadline when the decision was made.
    pub deadline: f64,
    pub weights: Weights,
    pub k: usize,
    pub locality_scale: f64,
    pub self_check: SelfCheck,
    pub candidates: Vec<CandidateInputs>,
    pub selected: Vec<NodeId>,
}

/// The origin's own admission inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub capable: bool,
    pub excluded: bool,
    pub committed_memory: u64,
    pub demand: u64,
    pub capacity: u64,
    pub predicted_completion: f64,
}

impl SelfCheck {
    pub fn feasible(&self, deadline: f64) -> bool {
        self.capable
            && !self.excluded
            && self.committed_memory.saturating_add(self.demand) <= self.capacity
            && self.predicted_completion <= deadline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Note {
    Submitted {
        task: TaskId,
        deadline_at: f64,
    },
    LocalAdmit {
        task: TaskId,
        attempt: u32,
        best_effort: bool,
    },
    Placement(PlacementRecord),
    Unplaced {
        task: TaskId,
        attempt: u32,
    },
    Claimed {
        task: TaskId,
        attempt: u32,
        node: NodeId,
    },
    Replaced {
        task: TaskId,
        attempt: u32,
        node: NodeId,
        cause: ReplaceCause,
    },
    Speculative {
        task: TaskId,
        attempt: u32,
    },
    Completed {
        task: TaskId,
        attempt: u32,
        node: NodeId,
        submitted_at: f64,
        deadline_at: f64,
        transfer_time: f64,
    },
    FailedPermanent {
        task: TaskId,
        attempts: u32,
    },
    Reserved {
        task: TaskId,
        attempt: u32,
        committed: u64,
        capacity: u64,
    },
    Released {
        task: TaskId,
        attempt: u32,
    },
    RunStarted {
        task: TaskId,
        attempt: u32,
        origin: NodeId,
        committed: u64,
        capacity: u64,
    },
    RunEnded {
        task: TaskId,
        attempt: u32,
        state: crate::executor::RunState,
        work: f64,
        progressed: f64,
    },
    QosWarn {
        task: TaskId,
        attempt: u32,
    },
    SwarmChanged {
        from: SwarmId,
        to: SwarmId,
        split: bool,
    },
    ReplicationDone {
        source: DataSourceId,
        from: NodeId,
        elapsed: f64,
    },
    ReplicationAborted {
        source: DataSourceId,
        from: NodeId,
    },
    ReplicationFailed {
        source: DataSourceId,
    },
    Utilization {
        value: f64,
    },
}

type Cx<'a, 'b> = &'a mut Ctx<'b, Agent>;

// What the last registry publication was derived from.
type Published = (u64, i64, Option<i64>, Position, Vec<TaskId>, BTreeSet<DataSourceId>);

pub struct Agent {
    me: NodeId,
    cfg: Arc<AgentConfig>,
    rng: ChaCha8Rng,
    spec: NodeSpec,
    profile: NodeProfile,
    membership: Membership,
    registry: Registry,
    catalog: Catalog,
    sessions: SessionTracker,
    load: LoadForecast,
    executor: Executor,
    origin: BTreeMap<TaskId, OriginTask>,
    // executor side: specs of reserved runs and their input transfer time
    held: BTreeMap<RunKey, (TaskSpec, f64)>,
    completion_epoch: u64,
    ticking: bool,
    supervising: bool,
    replications: BTreeMap<DataSourceId, Replication>,
    replication_epoch: u64,
    // registry entries with no membership record, and since when
    orphans: BTreeMap<NodeId, f64>,
    last_published: Option<Published>,
}

fn bucket(x: f64) -> i64 {
    (x * 10.0).round() as i64
}

impl Agent {
    pub fn new(spec: NodeSpec, cfg: Arc<AgentConfig>, seed: u64, stable: Option<AgentStable>) -> Self {
        let me = spec.profile.node;
        let incarnation = stable.map(|s| s.incarnation + 1).unwrap_or(0);
        // distinct stream per life
        let rng = ChaCha8Rng::seed_from_u64(substream_key(seed, "agent", me) ^ splitmix64(incarnation));
        let executor = Executor::new(
            spec.profile.hw.cpu_perf_index,
            spec.profile.hw.memory,
            spec.background_load,
        );
        let load =
            LoadForecast::new(spec.background_load.clamp(0.0, 1.0), cfg.alpha.clamp(1e-6, 1.0)).expect("clamped");
        let membership = Membership::new(me, incarnation, cfg.membership.clone(), 0.0);
        Self {
            me,
            rng,
            profile: spec.profile.clone(),
            spec,
            membership,
            registry: Registry::new(me),
            catalog: Catalog::new(me),
            sessions: SessionTracker::new(),
            load,
            executor,
            origin: BTreeMap::new(),
            held: BTreeMap::new(),
            completion_epoch: 0,
            ticking: false,
            supervising: false,
            replications: BTreeMap::new(),
            replication_epoch: 0,
            orphans: BTreeMap::new(),
            last_published: None,
            cfg,
        }
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn profile(&self) -> &NodeProfile {
        &self.profile
    }

    pub fn origin_tasks(&self) -> &BTreeMap<TaskId, OriginTask> {
        &self.origin
    }

    /// Hash over registry entries of members this node believes Alive.
    pub fn live_registry_hash(&self) -> u64 {
        let view = self.membership.view();
        let mut bytes = Vec::new();
        for e in self.registry.entries().filter(|e| view.is_alive(e.node)) {
            bytes.extend_from_slice(&e.node.0.to_le_bytes());
            bytes.extend_from_slice(&e.version.incarnation.to_le_bytes());
            bytes.extend_from_slice(&e.version.status_version.to_le_bytes());
        }
        crate::sim::rng::fnv1a64(&bytes)
    }

    fn incarnation(&self) -> u64 {
        self.membership.incarnation()
    }

    // ---- messaging ------------------------------------------------------

    fn send(&mut self, cx: Cx, to: NodeId, body: Message) {
        let deltas = self.membership.piggyback(Some(to));
        let env = Envelope {
            swarm: self.membership.swarm_id(),
            deltas,
            body,
        };
        cx.send(to, env.body.label(), wire::encode(&env));
    }

    fn hello(&mut self, cx: Cx) {
        let mut deltas = vec![self.membership.view().members[&self.me]];
        deltas.extend(
            self.membership
                .piggyback(None)
                .into_iter()
                .filter(|d| d.node != self.me),
        );
        deltas.truncate(self.cfg.membership.piggyback_limit.max(1));
        let env = Envelope {
            swarm: self.membership.swarm_id(),
            deltas,
            body: Message::Hello,
        };
        cx.broadcast("HELLO", wire::encode(&env));
    }

    // ---- profile publication -------------------------------------------

    fn publish(&mut self, cx: Cx, force: bool) {
        let util = self.load.ewma_utilization;
        let battery = self.profile.status.battery.level().map(|l| (l * 10.0).floor() as i64);
        let mut scheduled: Vec<TaskId> = self
            .executor
            .runs()
            .filter(|r| r.state == crate::executor::RunState::Running)
            .map(|r| r.key.task)
            .collect();
        scheduled.dedup();
        let key = (
            self.incarnation(),
            bucket(util),
            battery,
            self.profile.status.position,
            scheduled.clone(),
            self.profile.adv.data_sources.clone(),
        );
        if !force && self.last_published.as_ref() == Some(&key) {
            return;
        }
        let mut p = self.profile.clone();
        p.status.utilization = (bucket(util) as f64 / 10.0).clamp(0.0, 1.0);
        if let Some(b) = battery {
            p.status.battery = Battery::Level((b as f64 / 10.0).clamp(0.0, 1.0));
        }
        p.status.scheduled_task_ids = scheduled;
        let inc = self.incarnation();
        self.registry
            .local_update(p, inc, cx.now)
            .expect("own profile always carries own id");
        self.last_published = Some(key);
    }

    // ---- membership glue -----------------------------------------------

    fn after_membership(&mut self, out: ApplyOutcome, cx: Cx) {
        if out.refuted {
            self.publish(cx, true);
        }
        for t in out.transitions {
            self.on_transition(t, cx);
        }
    }

    fn on_transition(&mut self, t: Transition, cx: Cx) {
        self.sessions.observe(&t, cx.now);
        match t.to {
            MemberStatus::Suspect => {
                let dead_in = self.cfg.membership.t_dead;
                cx.set_timer(
                    dead_in,
                    Timer::SuspectTimeout {
                        node: t.node,
                        incarnation: t.incarnation,
                    },
                );
                cx.set_timer(
                    self.cfg.membership.t_probe,
                    Timer::SuspectPing {
                        node: t.node,
                        incarnation: t.incarnation,
                    },
                );
            }
            MemberStatus::Dead | MemberStatus::Left => {
                let cause = if t.to == MemberStatus::Dead {
                    ReplaceCause::MemberDead
                } else {
                    ReplaceCause::MemberLeft
                };
                self.origin_member_gone(t.node, cause, cx);
                self.worker_origin_gone(t.node, cx);
            }
            MemberStatus::Alive => {}
        }
    }

    /// A merge can only lower the min-Alive id; a raised id means this
    /// node lost the old minimum and carries on in a residual swarm.
    fn note_swarm(&mut self, from: SwarmId, to: Option<SwarmId>, cx: Cx) {
        if let Some(to) = to {
            cx.note(Note::SwarmChanged {
                from,
                to,
                split: to > from,
            });
        }
    }

    fn probe(&mut self, target: NodeId, cx: Cx) {
        let seq = self.membership.start_probe(target, cx.now);
        self.send(cx, target, Message::Ping { seq });
        cx.set_timer(self.cfg.membership.t_probe, Timer::ProbeTimeout { seq });
    }

    fn on_probe_tick(&mut self, cx: Cx) {
        cx.set_timer(self.cfg.membership.probe_period, Timer::Probe);
        if let Some(target) = self.membership.next_probe_target() {
            self.probe(target, cx);
        }
        let (transitions, gone) = self.membership.sweep(cx.now);
        for t in transitions {
            self.on_transition(t, cx);
        }
        for n in gone {
            self.registry.evict(n);
            self.orphans.remove(&n);
        }
        self.collect_orphans(cx.now);
        let before = self.membership.swarm_id();
        let split = self.membership.split_detect(cx.now);
        self.note_swarm(before, split, cx);
    }

    /// Registry entries whose node the membership never learned about are
    /// dropped after the retention period.
    fn collect_orphans(&mut self, now: f64) {
        let view = self.membership.view();
        let orphaned: BTreeSet<NodeId> = self
            .registry
            .known_nodes()
            .into_iter()
            .filter(|n| *n != self.me && !view.members.contains_key(n))
            .collect();
        self.orphans.retain(|n, _| orphaned.contains(n));
        for n in orphaned {
            let since = *self.orphans.entry(n).or_insert(now);
            if now - since >= self.cfg.membership.retention {
                self.registry.evict(n);
                self.orphans.remove(&n);
            }
        }
    }

    fn on_discover(&mut self, cx: Cx) {
        let jitter = self.rng.gen_range(0.75..1.25);
        cx.set_timer(self.cfg.discovery_period * jitter, Timer::Discover);
        self.hello(cx);
    }

    fn anti_entropy_peer(&mut self) -> Option<NodeId> {
        let view = self.membership.view();
        let peers: Vec<NodeId> = self
            .membership
            .neighbors()
            .iter()
            .filter(|n| view.is_alive(**n))
            .copied()
            .collect();
        if peers.is_empty() {
            return None;
        }
        Some(peers[self.rng.gen_range(0..peers.len())])
    }

    fn on_anti_entropy(&mut self, cx: Cx) {
        cx.set_timer(self.cfg.anti_entropy_period, Timer::AntiEntropy);
        if let Some(peer) = self.anti_entropy_peer() {
            let body = Message::Digest {
                registry: self.registry.digest(),
                sources: self.catalog.ids(),
            };
            self.send(cx, peer, body);
        }
    }

    fn install_delta(&mut self, entries: Vec<crate::registry::RegistryEntry>, sources: Vec<DataAnnouncement>) {
        for e in entries {
            let blocked = self
                .membership
                .tombstone(e.node)
                .is_some_and(|k| e.version.incarnation <= k);
            if !blocked {
                self.registry.merge(e);
            }
        }
        for s in sources {
            self.catalog.merge(s);
        }
    }

    fn on_message(&mut self, from: NodeId, bytes: &[u8], cx: Cx) -> Result<(), Fault> {
        let env = wire::decode(bytes).map_err(|e| Fault(format!("from {from}: {e}")))?;
        let out = self.membership.apply_deltas(&env.deltas, cx.now);
        self.after_membership(out, cx);
        let known_before = self.membership.view().is_alive(from);
        self.membership.heard_from(from);
        let before = self.membership.swarm_id();
        let changed = self.membership.observe_swarm(env.swarm);
        self.note_swarm(before, changed, cx);

        match env.body {
            Message::Hello => {
                let stranger = !known_before || env.swarm != self.membership.swarm_id() || changed.is_some();
                if stranger {
                    let view = self.membership.view().clone();
                    self.send(cx, from, Message::HelloAck { view });
                }
            }
            Message::HelloAck { view } => {
                let before = self.membership.swarm_id();
                let out = self.membership.merge_view(&view, cx.now);
                let learned = out
                    .transitions
                    .iter()
                    .any(|t| t.to == MemberStatus::Alive && t.from != Some(MemberStatus::Alive));
                self.after_membership(out, cx);
                if learned {
                    // pull the registry of the swarm just met rather than wait for anti-entropy
                    let body = Message::Digest {
                        registry: self.registry.digest(),
                        sources: self.catalog.ids(),
                    };
                    self.send(cx, from, body);
                }
                self.membership.heard_from(from);
                let after = self.membership.swarm_id();
                self.note_swarm(before, (after != before).then_some(after), cx);
            }
            Message::Ping { seq } => self.send(cx, from, Message::Ack { seq }),
            Message::Ack { seq } => {
                self.membership.on_ack(seq, from, cx.now);
            }
            Message::Digest { registry, sources } => {
                let entries = self.registry.newer_than(&registry);
                let missing = self.catalog.missing_from(&sources);
                let body = Message::Delta {
                    entries,
                    sources: missing,
                    digest: Some((self.registry.digest(), self.catalog.ids())),
                };
                self.send(cx, from, body);
            }
            Message::Delta {
                entries,
                sources,
                digest,
            } => {
                let theirs_view_needed = digest.is_some();
                self.install_delta(entries, sources);
                if let Some((registry, ids)) = digest {
                    let body = Message::Delta {
                        entries: self.registry.newer_than(&registry),
                        sources: self.catalog.missing_from(&ids),
                        digest: None,
                    };
                    self.send(cx, from, body);
                }
                // push-pull of the full member list rides the same exchange
                if theirs_view_needed {
                    let view = self.membership.view().clone();
                    self.send(cx, from, Message::HelloAck { view });
                }
            }
            Message::Offer {
                task,
                attempt,
                deadline_at,
            } => self.on_offer(from, task, attempt, deadline_at, cx),
            Message::Accept { task, attempt } => self.on_accept(from, task, attempt, cx),
            Message::Reject { task, attempt, .. } => self.on_reject(from, task, attempt, cx),
            Message::Claim { task, attempt } => self.on_claim(from, task, attempt, cx),
            Message::Cancel { task, attempt } => self.on_cancel(task, attempt, cx),
            Message::Nack { task, attempt } => self.on_attempt_failed(from, task, attempt, ReplaceCause::Nack, cx),
            Message::Done {
                task,
                attempt,
                transfer_time,
            } => self.on_done(from, task, attempt, transfer_time, cx),
            Message::Failed { task, attempt, cause } => {
                let c = match cause {
                    FailCause::DataUnavailable => ReplaceCause::DataUnavailable,
                    FailCause::Leaving | FailCause::Expired => ReplaceCause::Failed,
                };
                self.on_attempt_failed(from, task, attempt, c, cx)
            }
            Message::QosWarn { task, attempt, .. } => self.on_qos_warn(from, task, attempt, cx),
            Message::Fetch { source, bandwidth } => self.on_fetch(from, source, bandwidth, cx),
            Message::Data { source } => self.on_data(from, source, cx),
        }
        Ok(())
    }

    fn on_boot(&mut self, cx: Cx) {
        self.profile.status.position = cx.position;
        self.profile.status.battery = cx.battery;
        self.executor.advance(cx.now);
        for ann in self.spec.owned.clone() {
            if self.catalog.announce(ann).is_ok() {
                self.profile.adv.data_sources.insert(ann.id);
            }
        }
        // restart the member record at boot time
        let inc = self.incarnation();
        self.membership = Membership::new(self.me, inc, self.cfg.membership.clone(), cx.now);
        self.publish(cx, true);
        self.hello(cx);
        let p = self.cfg.membership.probe_period;
        let first_probe = self.rng.gen_range(0.0..p);
        cx.set_timer(first_probe, Timer::Probe);
        let d = self.cfg.discovery_period * self.rng.gen_range(0.75..1.25);
        cx.set_timer(d, Timer::Discover);
        let ae = self.rng.gen_range(0.0..self.cfg.anti_entropy_period);
        cx.set_timer(ae, Timer::AntiEntropy);
    }

    fn on_leave(&mut self, cx: Cx) {
        self.worker_leave(cx);
        self.membership.leave(cx.now);
        self.hello(cx);
    }

    fn on_timer(&mut self, timer: Timer, cx: Cx) {
        match timer {
            Timer::Probe => self.on_probe_tick(cx),
            Timer::ProbeTimeout { seq } => {
                if let Some(t) = self.membership.on_probe_timeout(seq, cx.now) {
                    self.on_transition(t, cx);
                }
            }
            Timer::SuspectTimeout { node, incarnation } => {
                if let Some(t) = self.membership.on_suspect_timeout(node, incarnation, cx.now) {
                    self.on_transition(t, cx);
                }
            }
            Timer::SuspectPing { node, incarnation } => {
                if self.membership.still_suspect(node, incarnation) {
                    if self.membership.neighbors().contains(&node) {
                        self.probe(node, cx);
                    }
                    cx.set_timer(self.cfg.membership.t_probe, Timer::SuspectPing { node, incarnation });
                }
            }
            Timer::Discover => self.on_discover(cx),
            Timer::AntiEntropy => self.on_anti_entropy(cx),
            Timer::ExecTick => self.on_exec_tick(cx),
            Timer::Completion { epoch } => {
                if epoch == self.completion_epoch {
                    self.collect_completions(cx);
                }
            }
            Timer::ReservationExpiry(key) => self.on_reservation_expiry(key, cx),
            Timer::StartRun(key) => self.on_start_run(key, cx),
            Timer::OfferTimeout { task, attempt } => self.on_offer_timeout(task, attempt, cx),
            Timer::Arbitrate { task, attempt } => self.on_arbitrate(task, attempt, cx),
            Timer::Retry { task } => self.on_retry(task, cx),
            Timer::Supervise => self.on_supervise(cx),
            Timer::ReplicationTimeout { source, epoch } => self.on_replication_timeout(source, epoch, cx),
            Timer::SendData { to, source } => {
                if self.profile.holds(source) {
                    self.send(cx, to, Message::Data { source });
                }
            }
        }
    }

    fn on_input(&mut self, input: Input, cx: Cx) {
        match input {
            Input::Submit(task) => self.submit(task, cx),
            Input::Replicate(source) => self.replicate(source, cx),
            Input::SetBackgroundLoad(load) => {
                self.executor.set_background_load(cx.now, load);
                self.after_running_set_change(cx);
            }
        }
    }

    fn update_load(&mut self) {
        let u = self.executor.utilization().clamp(0.0, 1.0);
        self.load = forecast_load(u, self.load).expect("utilization clamped");
    }
}

impl Process for Agent {
    type Timer = Timer;
    type Input = Input;
    type Note = Note;
    type Stable = AgentStable;

    fn handle(&mut self, event: Incoming<'_, Timer, Input>, cx: &mut Ctx<'_, Self>) -> Result<(), Fault> {
        match event {
            Incoming::Boot => self.on_boot(cx),
            Incoming::Message { from, bytes } => self.on_message(from, bytes, cx)?,
            Incoming::Timer(t) => self.on_timer(t, cx),
            Incoming::Input(i) => self.on_input(i, cx),
            Incoming::Leave => self.on_leave(cx),
            Incoming::Moved(p) => {
                self.profile.status.position = p;
                self.publish(cx, false);
            }
            Incoming::Battery(b) => {
                self.profile.status.battery = b;
                self.publish(cx, false);
            }
        }
        Ok(())
    }

    fn stable(&self) -> AgentStable {
        AgentStable {
            incarnation: self.membership.incarnation(),
        }
    }
}

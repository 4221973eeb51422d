//! Acceptance criteria A1-A9. Runs without the libtest harness so that
//! every criterion prints one PASS/FAIL line; exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use swarm_core::agent::{Note, PlacementRecord};
use swarm_core::cognition::{
    forecast_load, predict_availability, predict_completion, DataLocation, LoadForecast, SessionHistory,
};
use swarm_core::compare::{compare_with, Variant};
use swarm_core::membership::{merge_views, MemberState, MemberStatus, SwarmId, SwarmView};
use swarm_core::model::{
    Battery, CapabilityAdvertisement, DataInput, DataSourceId, DynamicStatus, NodeId, NodeProfile, Position,
    QoSRequirement, StaticHardwareProfile, StaticSoftwareProfile, TaskId, TaskSpec,
};
use swarm_core::registry::{merge_entry, Registry, RegistryEntry, Version};
use swarm_core::runner::{agent_config, run, Run, RunResult};
use swarm_core::scenario::{
    data_locality, heavy_churn, partition_heal, self_healing, steady_state, ChurnShape, ScenarioConfig,
};
use swarm_core::scheduler::Weights;
use swarm_core::sim::{Lifecycle, NetModel, Trace};
use swarm_core::wire::{self, Message};

// ---- pinned thresholds ------------------------------------------------------

/// Wall-clock budget for one reference run.
const A1_RUNTIME_BUDGET: Duration = Duration::from_secs(10);
const A2_SIZES: [usize; 4] = [8, 16, 32, 64];
/// Probe rounds allowed after the heal.
const A3_ROUNDS: f64 = 20.0;
/// Largest decision the brute-force oracle must be checked on.
const A4_MAX_CANDIDATES: usize = 6;
const A5_NODES: usize = 16;
const A5_SEEDS: u64 = 20;
const A5_W_AWARE: f64 = 0.4;
const A6_SEEDS: u64 = 20;
const A6_W_LOCALITY: f64 = 0.2;
/// Share of seeds on which the paired difference must be negative.
const PAIRED_SHARE: f64 = 0.7;
const A7_REPETITIONS: u64 = 20;
/// Seconds into the run at which the executor is killed.
const A7_KILL_AFTER_START: f64 = 10.0;
const A8_CASES: u32 = 10_000;
const A9_CASES: u32 = 1_000;
const A9_COMPLETION_TOL: f64 = 1e-9;
const A9_EWMA_TOL: f64 = 1e-6;

// ---- harness ----------------------------------------------------------------

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("A1 determinism", a1_determinism),
        ("A2 membership/registry convergence", a2_convergence),
        ("A3 partition tolerance", a3_partition),
        ("A4 local-first and correctness oracles", a4_oracles),
        ("A5 availability-aware benefit", a5_availability),
        ("A6 locality benefit", a6_locality),
        ("A7 self-healing latency", a7_self_healing),
        ("A8 semilattice properties", a8_semilattice),
        ("A9 cognition oracles", a9_cognition),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn reference_scenarios() -> Vec<ScenarioConfig> {
    vec![
        steady_state(1),
        heavy_churn(64, 1, ChurnShape::default()),
        partition_heal(1),
        data_locality(1),
        self_healing(1),
    ]
}

fn probe_period(cfg: &ScenarioConfig) -> f64 {
    agent_config(cfg).membership.probe_period
}

// ---- A1 ---------------------------------------------------------------------

fn a1_determinism() -> Outcome {
    let mut slowest = (String::new(), 0.0);
    for cfg in reference_scenarios() {
        let mut digests = Vec::new();
        for _ in 0..2 {
            let t = Instant::now();
            let r = run(&cfg, Trace::hash_only()).map_err(|e| format!("{}: {e}", cfg.name))?;
            let took = t.elapsed();
            check(took < A1_RUNTIME_BUDGET, || format!("{} took {took:?}", cfg.name))?;
            if took.as_secs_f64() > slowest.1 {
                slowest = (cfg.name.clone(), took.as_secs_f64());
            }
            digests.push((r.trace.digest_hex(), r.trace.len(), r.metrics.to_csv()));
        }
        check(digests[0] == digests[1], || {
            format!("{} differs between runs", cfg.name)
        })?;
    }
    // one full line-by-line comparison on a small scenario
    let cfg = steady_state(7);
    let a = run(&cfg, Trace::in_memory()).map_err(|e| e.to_string())?;
    let b = run(&cfg, Trace::in_memory()).map_err(|e| e.to_string())?;
    check(a.trace.lines() == b.trace.lines(), || {
        "steady-state trace lines differ".into()
    })?;
    Ok(format!(
        "5 reference scenarios identical twice; slowest {} {:.2}s",
        slowest.0, slowest.1
    ))
}

// ---- A2 ---------------------------------------------------------------------

fn a2_convergence() -> Outcome {
    let mut out = Vec::new();
    for n in A2_SIZES {
        let cfg = heavy_churn(n, 1, ChurnShape::default());
        let p = probe_period(&cfg);
        let rounds = 3.0 * (n as f64).log2().ceil() + 5.0;
        let bound = rounds * p;
        let r = run(&cfg, Trace::hash_only()).map_err(|e| e.to_string())?;
        let m = &r.metrics;
        let last = r.samples.last().ok_or("no samples")?;
        check(last.members_agree && last.registries_agree, || {
            format!("N={n}: not converged at the end of the run")
        })?;
        for (what, t) in [
            ("membership", m.membership_convergence_time),
            ("registry", m.registry_convergence_time),
        ] {
            check(t <= bound, || format!("N={n}: {what} took {t:.2}s > {bound:.1}s"))?;
        }
        out.push(format!(
            "N={n} {:.1}/{:.1}s<={bound:.0}s",
            m.membership_convergence_time, m.registry_convergence_time
        ));
    }
    Ok(out.join(", "))
}

// ---- A3 ---------------------------------------------------------------------

fn a3_partition() -> Outcome {
    let cfg = partition_heal(1);
    let part = cfg.partitions[0].clone();
    let p = probe_period(&cfg);
    let r = run(&cfg, Trace::hash_only()).map_err(|e| e.to_string())?;
    let side = |n: NodeId| if part.group_a.contains(&n) { 0 } else { 1 };

    let mut origin_of = BTreeMap::new();
    for (_, node, note) in &r.notes {
        if let Note::Submitted { task, .. } = note {
            origin_of.insert(*task, *node);
        }
    }
    let mut per_side = [0u32; 2];
    for (t, executor, note) in &r.notes {
        if let Note::RunEnded {
            task,
            state: swarm_core::executor::RunState::Done,
            ..
        } = note
        {
            if *t > part.start && *t < part.end {
                let origin = origin_of[task];
                if side(origin) == side(*executor) {
                    per_side[side(origin)] += 1;
                }
            }
        }
    }
    check(per_side.iter().all(|c| *c >= 1), || {
        format!("completions during partition per side: {per_side:?}")
    })?;
    let split_seen = r
        .samples
        .iter()
        .any(|s| s.t > part.start && s.t < part.end && s.swarm_ids.len() == 2);
    check(split_seen, || "no split into two swarms during the partition".into())?;

    let deadline = part.end + A3_ROUNDS * p;
    let merged_at = r
        .samples
        .iter()
        .filter(|s| s.t >= part.end)
        .find(|s| s.swarm_ids.len() == 1 && s.registries_agree && s.members_agree)
        .map(|s| s.t)
        .ok_or("never converged after heal")?;
    check(merged_at <= deadline, || {
        format!("converged at {merged_at:.1}s > {deadline:.1}s")
    })?;
    let later_ids: BTreeSet<SwarmId> = r
        .samples
        .iter()
        .filter(|s| s.t >= merged_at)
        .flat_map(|s| s.swarm_ids.iter().copied())
        .collect();
    check(later_ids.len() == 1, || format!("swarm ids after merge: {later_ids:?}"))?;
    check(r.metrics.registry_convergence_time <= A3_ROUNDS * p, || {
        format!(
            "registry settled {:.1}s after heal",
            r.metrics.registry_convergence_time
        )
    })?;
    Ok(format!(
        "completions per side {per_side:?}; one swarm and agreeing registries {:.1}s after heal",
        merged_at - part.end
    ))
}

// ---- A4 ---------------------------------------------------------------------

/// Independent re-derivation of a placement decision: every candidate's
/// score, and its rank as the number of candidates that beat it.
fn oracle_selection(rec: &PlacementRecord) -> Vec<NodeId> {
    let w = rec.weights;
    let totals: Vec<(NodeId, f64)> = rec
        .candidates
        .iter()
        .map(|c| {
            let a = c.availability.clamp(0.0, 1.0);
            let q = if c.predicted_completion <= 0.0 {
                1.0
            } else {
                (rec.deadline / c.predicted_completion).clamp(0.0, 1.0)
            };
            let l = 1.0 / (1.0 + c.distance / rec.locality_scale);
            (c.node, w.availability * a + w.qos * q + w.locality * l)
        })
        .collect();
    let mut ranked: Vec<(usize, NodeId)> = totals
        .iter()
        .map(|(n, t)| {
            let beaten_by = totals.iter().filter(|(m, u)| u > t || (u == t && m < n)).count();
            (beaten_by, *n)
        })
        .collect();
    ranked.sort();
    ranked.into_iter().filter(|(r, _)| *r < rec.k).map(|(_, n)| n).collect()
}

#[derive(Default)]
struct A4Tally {
    local_first: usize,
    decisions: usize,
    small_decisions: usize,
    claims: usize,
    runs: usize,
}

fn a4_check_run(cfg: &ScenarioConfig, tally: &mut A4Tally) -> Result<(), String> {
    let mut run = Run::new(cfg, Trace::hash_only()).map_err(|e| e.to_string())?;
    run.sim_mut().tap_messages();
    let r: RunResult = run.finish().map_err(|e| e.to_string())?;
    let name = &cfg.name;

    let mut offers: BTreeSet<(TaskId, u32)> = BTreeSet::new();
    let mut claims: BTreeMap<(TaskId, u32), u32> = BTreeMap::new();
    for m in &r.sent {
        if m.label != "OFFER" && m.label != "CLAIM" {
            continue;
        }
        let env = wire::decode(&m.bytes).map_err(|e| e.to_string())?;
        match env.body {
            Message::Offer { task, attempt, .. } => {
                offers.insert((task.task_id, attempt));
            }
            Message::Claim { task, attempt } => *claims.entry((task, attempt)).or_default() += 1,
            _ => {}
        }
    }

    // local-first and the scoring oracle
    for (_, origin, note) in &r.notes {
        let Note::Placement(rec) = note else { continue };
        if rec.self_check.feasible(rec.deadline) {
            tally.local_first += 1;
            check(!offers.contains(&(rec.task, rec.attempt)), || {
                format!(
                    "{name}: OFFER sent for {} attempt {} feasible at origin",
                    rec.task, rec.attempt
                )
            })?;
            check(rec.selected == vec![*origin], || {
                format!("{name}: feasible {} not admitted locally", rec.task)
            })?;
        } else {
            tally.decisions += 1;
            if rec.candidates.len() <= A4_MAX_CANDIDATES {
                tally.small_decisions += 1;
            }
            let expected = oracle_selection(rec);
            check(rec.selected == expected, || {
                format!(
                    "{name}: {} attempt {} selected {:?}, oracle {:?}",
                    rec.task, rec.attempt, rec.selected, expected
                )
            })?;
        }
    }

    // at most one claim per attempt, and never running on two nodes at once
    for ((task, attempt), n) in &claims {
        check(*n <= 1, || {
            format!("{name}: {task} attempt {attempt} claimed {n} times")
        })?;
    }
    tally.claims += claims.len();
    let demand: BTreeMap<TaskId, u64> = cfg
        .workload
        .iter()
        .map(|a| (a.task.task_id, a.task.memory_demand))
        .collect();
    let capacity: BTreeMap<NodeId, u64> = cfg.nodes.iter().map(|n| (n.id, n.hw.memory)).collect();

    enum Ev<'a> {
        Note(NodeId, &'a Note),
        Down(NodeId),
    }
    let mut events: Vec<(f64, u8, Ev)> = Vec::new();
    for (t, node, note) in &r.notes {
        events.push((*t, 0, Ev::Note(*node, note)));
    }
    for ev in &r.lifecycle {
        match ev {
            Lifecycle::Crashed { t, node, .. } | Lifecycle::Left { t, node } => events.push((*t, 1, Ev::Down(*node))),
            Lifecycle::Joined { .. } => {}
        }
    }
    // stable sort keeps each node's notes in emission order
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut held: BTreeMap<NodeId, BTreeMap<(TaskId, u32), u64>> = BTreeMap::new();
    let mut running: BTreeMap<(TaskId, u32), NodeId> = BTreeMap::new();
    let mut completions: BTreeMap<TaskId, u32> = BTreeMap::new();
    for (t, _, ev) in events {
        match ev {
            Ev::Down(node) => {
                held.remove(&node);
                running.retain(|_, n| *n != node);
            }
            Ev::Note(node, note) => match note {
                Note::Reserved { task, attempt, .. } => {
                    let h = held.entry(node).or_default();
                    h.insert((*task, *attempt), demand[task]);
                    let used: u64 = h.values().sum();
                    check(used <= capacity[&node], || {
                        format!("{name}: {node} holds {used} MiB > {} at {t:.2}", capacity[&node])
                    })?;
                }
                Note::Released { task, attempt } => {
                    held.entry(node).or_default().remove(&(*task, *attempt));
                }
                Note::RunStarted { task, attempt, .. } => {
                    tally.runs += 1;
                    if let Some(other) = running.insert((*task, *attempt), node) {
                        return Err(format!(
                            "{name}: {task} attempt {attempt} runs on {other} and {node} at {t:.2}"
                        ));
                    }
                }
                Note::RunEnded { task, attempt, .. } => {
                    held.entry(node).or_default().remove(&(*task, *attempt));
                    running.remove(&(*task, *attempt));
                }
                Note::Completed { task, .. } => {
                    let c = completions.entry(*task).or_default();
                    *c += 1;
                    check(*c == 1, || format!("{name}: {task} completed twice"))?;
                }
                _ => {}
            },
        }
    }
    Ok(())
}

fn a4_oracles() -> Outcome {
    let mut tally = A4Tally::default();
    let mut scenarios = reference_scenarios();
    scenarios.push(heavy_churn(16, 1, ChurnShape::default()));
    for cfg in &scenarios {
        a4_check_run(cfg, &mut tally)?;
    }
    check(tally.small_decisions > 0, || {
        "no decision with few candidates was observed".into()
    })?;
    check(tally.local_first > 0, || "no locally feasible task was observed".into())?;
    Ok(format!(
        "{} local admissions without OFFER, {} decisions match the oracle ({} with <= {A4_MAX_CANDIDATES} candidates), {} claims, {} runs checked",
        tally.local_first, tally.decisions, tally.small_decisions, tally.claims, tally.runs
    ))
}

// ---- A5 / A6 ----------------------------------------------------------------

fn weights(a: f64, q: f64, l: f64) -> Option<Weights> {
    Some(Weights::new(a, q, l).expect("valid weights"))
}

fn paired_summary(diffs: &[f64]) -> (usize, f64) {
    let neg = diffs.iter().filter(|d| **d < 0.0).count();
    (neg, neg as f64 / diffs.len() as f64)
}

fn a5_availability() -> Outcome {
    let base = Weights::default();
    let variants = [
        Variant {
            name: "blind".into(),
            weights: weights(0.0, base.qos, base.locality),
            ..Default::default()
        },
        Variant {
            name: "aware".into(),
            weights: weights(A5_W_AWARE, base.qos, base.locality),
            ..Default::default()
        },
    ];
    let seeds: Vec<u64> = (1..=A5_SEEDS).collect();
    let c = compare_with(&variants, &seeds, |s| heavy_churn(A5_NODES, s, ChurnShape::default()))
        .map_err(|e| e.to_string())?;
    let (blind, aware) = (c.mean(0, "failure_rate"), c.mean(1, "failure_rate"));
    let diffs = c.paired_differences(1, "failure_rate");
    let (neg, share) = paired_summary(&diffs);
    check(aware < blind, || {
        format!("mean failure rate aware {aware:.3} >= blind {blind:.3}")
    })?;
    check(share >= PAIRED_SHARE, || {
        format!("aware better on only {neg}/{} seeds", diffs.len())
    })?;
    Ok(format!(
        "failure rate aware {aware:.3} vs blind {blind:.3}; aware lower on {neg}/{} seeds",
        diffs.len()
    ))
}

fn a6_locality() -> Outcome {
    let base = Weights::default();
    let variants = [
        Variant {
            name: "no-locality".into(),
            weights: weights(base.availability, base.qos, 0.0),
            ..Default::default()
        },
        Variant {
            name: "locality".into(),
            weights: weights(base.availability, base.qos, A6_W_LOCALITY),
            ..Default::default()
        },
    ];
    let seeds: Vec<u64> = (1..=A6_SEEDS).collect();
    let c = compare_with(&variants, &seeds, data_locality).map_err(|e| e.to_string())?;
    let (off, on) = (c.mean(0, "mean_transfer_time"), c.mean(1, "mean_transfer_time"));
    let diffs = c.paired_differences(1, "mean_transfer_time");
    let (neg, share) = paired_summary(&diffs);
    check(on < off, || {
        format!("mean transfer with locality {on:.3}s >= without {off:.3}s")
    })?;
    check(share >= PAIRED_SHARE, || {
        format!("locality better on only {neg}/{} seeds", diffs.len())
    })?;
    Ok(format!(
        "mean transfer {on:.2}s with locality vs {off:.2}s without; lower on {neg}/{} seeds",
        diffs.len()
    ))
}

// ---- A7 ---------------------------------------------------------------------

fn a7_self_healing() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bound = 0.0;
    for seed in 1..=A7_REPETITIONS {
        let cfg = self_healing(seed);
        let acfg = agent_config(&cfg);
        bound = acfg.membership.t_dead + acfg.membership.probe_period;
        let task = cfg.workload[0].task.task_id;
        let mut run = Run::new(&cfg, Trace::hash_only()).map_err(|e| e.to_string())?;

        let mut started = None;
        let mut t = cfg.workload[0].time;
        while started.is_none() && t < cfg.duration {
            t += 0.5;
            run.advance_to(t).map_err(|e| e.to_string())?;
            started = run.notes().iter().find_map(|(at, node, n)| match n {
                Note::RunStarted { task: k, .. } if *k == task => Some((*at, *node)),
                _ => None,
            });
        }
        let (t_start, executor) = started.ok_or_else(|| format!("seed {seed}: task never started"))?;
        let kill = t_start + A7_KILL_AFTER_START;
        run.advance_to(kill - 0.5).map_err(|e| e.to_string())?;
        check(
            !run.notes()
                .iter()
                .any(|(_, _, n)| matches!(n, Note::Completed { .. } | Note::Replaced { .. })),
            || format!("seed {seed}: task finished or moved before the kill"),
        )?;
        run.sim_mut()
            .schedule_crash(kill, executor)
            .map_err(|e| e.to_string())?;
        run.advance_to(kill + 2.0 * bound).map_err(|e| e.to_string())?;
        let replaced_at = run
            .notes()
            .iter()
            .find_map(|(at, _, n)| match n {
                Note::Placement(rec) if rec.task == task && rec.attempt > 1 && *at >= kill => Some(*at),
                _ => None,
            })
            .ok_or_else(|| format!("seed {seed}: no re-placement within {:.1}s", 2.0 * bound))?;
        let latency = replaced_at - kill;
        check(latency <= bound, || {
            format!("seed {seed}: re-placement after {latency:.3}s > {bound:.1}s")
        })?;
        worst = worst.max(latency);
    }
    Ok(format!(
        "{A7_REPETITIONS}/{A7_REPETITIONS} re-placed; worst {worst:.3}s <= {bound:.1}s"
    ))
}

// ---- A8 ---------------------------------------------------------------------

fn arb_member(node: u64) -> impl Strategy<Value = MemberState> {
    (0u8..4, 0u64..4, 0u32..4).prop_map(move |(s, inc, t)| MemberState {
        node: NodeId(node),
        status: match s {
            0 => MemberStatus::Alive,
            1 => MemberStatus::Suspect,
            2 => MemberStatus::Dead,
            _ => MemberStatus::Left,
        },
        incarnation: inc,
        last_update_time: t as f64,
    })
}

fn arb_view() -> impl Strategy<Value = SwarmView> {
    let members = proptest::collection::btree_set(0u64..6, 0..6)
        .prop_flat_map(|nodes| nodes.into_iter().map(arb_member).collect::<Vec<_>>());
    (members, 0u64..4, 0u64..6).prop_map(|(ms, vv, sid)| {
        let members: BTreeMap<NodeId, MemberState> = ms.into_iter().map(|m| (m.node, m)).collect();
        let swarm_id = members
            .values()
            .find(|m| m.status == MemberStatus::Alive)
            .or_else(|| members.values().next())
            .map(|m| SwarmId(m.node))
            .unwrap_or(SwarmId(NodeId(sid)));
        SwarmView {
            swarm_id,
            members,
            view_version: vv,
        }
    })
}

fn test_profile(node: u64, util_step: u8) -> NodeProfile {
    NodeProfile {
        node: NodeId(node),
        hw: StaticHardwareProfile {
            cpu_perf_index: 10.0,
            memory: 1024,
            link_bandwidth: 5.0,
        },
        sw: StaticSoftwareProfile {
            os_tag: "linux".into(),
            supported_runtimes: BTreeSet::new(),
        },
        status: DynamicStatus {
            utilization: f64::from(util_step) / 4.0,
            battery: Battery::Mains,
            battery_drain_rate: 0.0,
            position: Position::new(0.0, 0.0),
            scheduled_task_ids: Vec::new(),
            status_version: 0,
        },
        adv: CapabilityAdvertisement {
            node: NodeId(node),
            task_typologies: ["infer".to_string()].into(),
            data_sources: BTreeSet::new(),
        },
    }
}

fn arb_entry() -> impl Strategy<Value = RegistryEntry> {
    (0u64..4).prop_flat_map(arb_entry_of)
}

fn arb_entry_of(node: u64) -> impl Strategy<Value = RegistryEntry> {
    (0u64..3, 0u64..3, 0u32..3, 0u8..3).prop_map(move |(inc, sv, t, u)| {
        let mut profile = test_profile(node, u);
        profile.status.status_version = sv;
        RegistryEntry {
            node: NodeId(node),
            profile,
            version: Version::new(inc, sv),
            stamped_time: t as f64,
        }
    })
}

fn registry_of(entries: &[RegistryEntry]) -> Registry {
    let mut r = Registry::new(NodeId(99));
    for e in entries {
        r.merge(e.clone());
    }
    r
}

fn join(a: &Registry, b: &Registry) -> Registry {
    let mut out = a.clone();
    for e in b.entries() {
        out.merge(e.clone());
    }
    out
}

fn same_registry(a: &Registry, b: &Registry) -> bool {
    a.entries().collect::<Vec<_>>() == b.entries().collect::<Vec<_>>()
}

fn a8_semilattice() -> Outcome {
    let cfg = Config {
        cases: A8_CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new(cfg.clone());
    runner
        .run(&(arb_view(), arb_view(), arb_view()), |(a, b, c)| {
            let ab = merge_views(&a, &b);
            prop_assert_eq!(&ab, &merge_views(&b, &a), "commutativity");
            prop_assert_eq!(
                merge_views(&ab, &c),
                merge_views(&a, &merge_views(&b, &c)),
                "associativity"
            );
            prop_assert_eq!(merge_views(&a, &a), a.clone(), "idempotence");
            for src in [&a, &b] {
                for (id, m) in &src.members {
                    let merged = ab.members.get(id).ok_or_else(|| TestCaseError::fail("member lost"))?;
                    prop_assert!(merged.incarnation >= m.incarnation, "incarnation regressed");
                }
                prop_assert!(ab.view_version >= src.view_version, "view version regressed");
            }
            Ok(())
        })
        .map_err(|e| format!("merge_views: {e}"))?;

    let mut runner = TestRunner::new(cfg.clone());
    runner
        .run(&(arb_entry_of(0), arb_entry_of(0), arb_entry_of(0)), |(a, b, c)| {
            let ab = merge_entry(&a, &b);
            prop_assert_eq!(&ab, &merge_entry(&b, &a));
            prop_assert_eq!(merge_entry(&ab, &c), merge_entry(&a, &merge_entry(&b, &c)));
            prop_assert_eq!(merge_entry(&a, &a), a.clone());
            prop_assert!(ab.version >= a.version && ab.version >= b.version);
            Ok(())
        })
        .map_err(|e| format!("merge_entry: {e}"))?;

    let entries = || proptest::collection::vec(arb_entry(), 0..8);
    let mut runner = TestRunner::new(cfg);
    runner
        .run(&(entries(), entries(), entries()), |(ea, eb, ec)| {
            let (a, b, c) = (registry_of(&ea), registry_of(&eb), registry_of(&ec));
            let ab = join(&a, &b);
            prop_assert!(same_registry(&ab, &join(&b, &a)), "commutativity");
            prop_assert!(same_registry(&join(&ab, &c), &join(&a, &join(&b, &c))), "associativity");
            prop_assert!(same_registry(&join(&a, &a), &a), "idempotence");
            for src in [&a, &b] {
                for e in src.entries() {
                    let merged = ab.get(e.node).ok_or_else(|| TestCaseError::fail("entry lost"))?;
                    prop_assert!(merged.version >= e.version, "version regressed");
                }
            }
            Ok(())
        })
        .map_err(|e| format!("registry: {e}"))?;
    Ok(format!(
        "{A8_CASES} cases each for views, entries and registries; no counterexample"
    ))
}

// ---- A9 ---------------------------------------------------------------------

/// Counting oracle for availability: battery first, then the smoothed
/// share of past sessions that outlived the horizon.
fn availability_oracle(battery: Battery, drain: f64, sessions: &[f64], age: f64, horizon: f64) -> f64 {
    let powered = match battery {
        Battery::Mains => true,
        Battery::Level(level) => level - drain * horizon > 0.0,
    };
    if !powered {
        return 0.0;
    }
    let mut reached = 0u32;
    let mut survived = 0u32;
    for &d in sessions {
        if d >= age {
            reached += 1;
        }
        if d >= age + horizon {
            survived += 1;
        }
    }
    (f64::from(survived) + 1.0) / (f64::from(reached) + 2.0)
}

fn a9_cognition() -> Outcome {
    let cfg = Config {
        cases: A9_CASES,
        failure_persistence: None,
        ..Config::default()
    };

    let battery = prop_oneof![Just(Battery::Mains), (0.0f64..1.0).prop_map(Battery::Level)];
    let history = (
        proptest::collection::vec(prop_oneof![(0u32..60).prop_map(f64::from), 0.0f64..60.0], 0..12),
        prop_oneof![(0u32..40).prop_map(f64::from), 0.0f64..40.0],
    );
    let mut runner = TestRunner::new(cfg.clone());
    runner
        .run(
            &(
                battery,
                0.0f64..0.05,
                history,
                prop_oneof![(0u32..30).prop_map(f64::from), 0.0f64..30.0],
            ),
            |(battery, drain, (sessions, age), horizon)| {
                let mut p = test_profile(1, 0);
                p.status.battery = battery;
                p.status.battery_drain_rate = drain;
                let h = SessionHistory {
                    completed: sessions.clone(),
                    current_session_age: age,
                };
                let got = predict_availability(&p, &h, horizon).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let want = availability_oracle(battery, drain, &sessions, age, horizon);
                prop_assert_eq!(got, want);
                Ok(())
            },
        )
        .map_err(|e| format!("predict_availability: {e}"))?;

    let net = NetModel::default();
    let mut runner = TestRunner::new(cfg.clone());
    runner
        .run(
            &(
                1.0f64..500.0,
                0.5f64..40.0,
                0.0f64..1.0,
                0.5f64..20.0,
                proptest::collection::vec((0.1f64..100.0, any::<bool>(), 0.0f64..400.0, 0.0f64..400.0), 0..4),
            ),
            |(work, perf, util, bw, inputs)| {
                let mut p = test_profile(1, 0);
                p.hw.cpu_perf_index = perf;
                p.hw.link_bandwidth = bw;
                p.status.utilization = util;
                p.status.position = Position::new(0.0, 0.0);
                let mut locations = BTreeMap::new();
                let mut data = Vec::new();
                let mut hand = work / (perf * f64::max(0.05, 1.0 - util));
                for (i, (size, local, x, y)) in inputs.iter().enumerate() {
                    let id = DataSourceId(i as u64);
                    data.push(DataInput {
                        source: id,
                        size: *size,
                    });
                    if *local {
                        locations.insert(id, DataLocation::Local);
                    } else {
                        locations.insert(id, DataLocation::Remote(Position::new(*x, *y)));
                        let dist = (x * x + y * y).sqrt();
                        hand += size / bw + net.base_latency + net.latency_per_meter * dist;
                    }
                }
                let task = TaskSpec {
                    task_id: TaskId(1),
                    typology: "infer".into(),
                    work,
                    memory_demand: 0,
                    input_data: data,
                    qos: QoSRequirement::with_deadline(60.0),
                    origin_node: NodeId(1),
                };
                let got = predict_completion(&task, &p, &locations, &net, 0.05);
                prop_assert!(
                    (got - hand).abs() <= A9_COMPLETION_TOL * hand.max(1.0),
                    "{} vs {}",
                    got,
                    hand
                );
                Ok(())
            },
        )
        .map_err(|e| format!("predict_completion: {e}"))?;

    let mut runner = TestRunner::new(cfg);
    runner
        .run(&(0.01f64..0.99, 0.0f64..=1.0, 0.0f64..=1.0), |(alpha, e0, c)| {
            let gap = (e0 - c).abs();
            let steps = if gap < A9_EWMA_TOL {
                0
            } else {
                ((A9_EWMA_TOL / gap).ln() / (1.0 - alpha).ln()).ceil() as usize
            };
            let mut s = LoadForecast::new(e0, alpha).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for _ in 0..steps {
                s = forecast_load(c, s).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert!((0.0..=1.0).contains(&s.ewma_utilization));
            }
            prop_assert!(
                (s.ewma_utilization - c).abs() < A9_EWMA_TOL,
                "after {} steps |{} - {}| >= {}",
                steps,
                s.ewma_utilization,
                c,
                A9_EWMA_TOL
            );
            Ok(())
        })
        .map_err(|e| format!("forecast_load: {e}"))?;
    Ok(format!(
        "{A9_CASES} cases each: availability exact, completion within {A9_COMPLETION_TOL:e}, ewma bound holds"
    ))
}

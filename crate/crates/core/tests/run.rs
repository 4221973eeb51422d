use std::collections::BTreeSet;

use swarm_core::runner::{run, RunError};
use swarm_core::scenario::{
    data_locality, heavy_churn, partition_heal, self_healing, steady_state, ChurnShape, ScenarioConfig,
};
use swarm_core::sim::{Trace, TraceRecord};

/// Tasks per note kind, recounted from the trace lines alone.
fn recount(lines: &[String], kind: &str) -> usize {
    lines
        .iter()
        .map(|l| TraceRecord::parse(l).expect("trace line parses"))
        .filter(|r| r.ev == "note")
        .filter_map(|r| r.detail)
        .filter(|d| d["kind"] == kind)
        .map(|d| d["task"].to_string())
        .collect::<BTreeSet<_>>()
        .len()
}

#[test]
fn empty_workload_reports_zero_task_metrics() {
    let mut cfg = steady_state(3);
    cfg.workload.clear();
    let m = run(&cfg, Trace::hash_only()).unwrap().metrics;
    assert_eq!(m.tasks_submitted, 0);
    assert_eq!(m.tasks_done, 0);
    assert_eq!(m.tasks_failed_permanent, 0);
    assert_eq!(m.tasks_in_flight, 0);
    assert_eq!(m.deadline_violations, 0);
    assert_eq!(m.latency_mean, 0.0);
    assert_eq!(m.latency_p95, 0.0);
    assert_eq!(m.mean_transfer_time, 0.0);
    assert_eq!(m.failure_rate, 0.0);
    assert_eq!(m.replacements, 0);
    assert!(m.messages_sent > 0, "membership still gossips");
}

#[test]
fn same_seed_gives_identical_metrics_and_trace() {
    let cfg = partition_heal(4);
    let a = run(&cfg, Trace::in_memory()).unwrap();
    let b = run(&cfg, Trace::in_memory()).unwrap();
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_eq!(a.trace.lines(), b.trace.lines());
    assert_eq!(a.trace.digest_hex(), b.trace.digest_hex());
}

#[test]
fn different_seed_changes_the_trace() {
    let a = run(&steady_state(1), Trace::hash_only()).unwrap();
    let b = run(&steady_state(2), Trace::hash_only()).unwrap();
    assert_ne!(a.trace.digest_hex(), b.trace.digest_hex());
}

#[test]
fn reference_scenarios_balance_against_the_trace() {
    let scenarios = [
        steady_state(1),
        heavy_churn(16, 2, ChurnShape::default()),
        partition_heal(1),
        data_locality(1),
        self_healing(1),
    ];
    for cfg in &scenarios {
        let r = run(cfg, Trace::in_memory()).unwrap();
        let m = &r.metrics;
        assert!(m.balanced(), "{}: {:?}", cfg.name, m);
        let lines = r.trace.lines();
        assert_eq!(recount(lines, "submitted") as u64, m.tasks_submitted, "{}", cfg.name);
        assert_eq!(recount(lines, "completed") as u64, m.tasks_done, "{}", cfg.name);
        assert!(
            recount(lines, "failed-permanent") as u64 <= m.tasks_failed_permanent,
            "{}",
            cfg.name
        );
        assert_eq!(
            m.tasks_submitted + m.tasks_not_submitted,
            cfg.workload.len() as u64,
            "{}",
            cfg.name
        );
    }
}

#[test]
fn ten_node_fifty_task_reference_completes_everything() {
    let cfg = steady_state(1);
    assert_eq!(cfg.nodes.len(), 10);
    assert_eq!(cfg.workload.len(), 50);
    let m = run(&cfg, Trace::hash_only()).unwrap().metrics;
    assert_eq!(m.tasks_submitted, 50);
    assert_eq!(m.tasks_done, 50);
    assert!(m.local_admissions > 0 && m.offloaded_placements > 0);
}

#[test]
fn invalid_scenario_is_rejected_before_running() {
    let mut cfg: ScenarioConfig = steady_state(1);
    cfg.workload[0].time = cfg.duration + 1.0;
    match run(&cfg, Trace::hash_only()) {
        Err(RunError::Invalid(v)) => assert!(v.iter().any(|x| x.path.starts_with("workload[0]")), "{v:?}"),
        other => panic!("expected a validation error, got {:?}", other.map(|r| r.metrics)),
    }
}

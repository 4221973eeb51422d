use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use swarm_core::membership::{merge_views, MemberState, MemberStatus, SwarmId, SwarmView};
use swarm_core::model::NodeId;
use swarm_core::runner::run;
use swarm_core::scenario::{heavy_churn, steady_state, ChurnShape};
use swarm_core::scheduler::{place, CandidateInputs, SchedulerParams};
use swarm_core::sim::Trace;
use swarm_core::wire::{decode, encode, Envelope, Message};

fn candidates(n: u64) -> Vec<CandidateInputs> {
    (0..n)
        .map(|i| CandidateInputs {
            node: NodeId(i),
            availability: (i * 37 % 100) as f64 / 100.0,
            predicted_completion: 5.0 + (i * 13 % 50) as f64,
            distance: (i * 71 % 300) as f64,
        })
        .collect()
}

fn view(n: u64, shift: u64) -> SwarmView {
    let members: BTreeMap<NodeId, MemberState> = (0..n)
        .map(|i| {
            let status = if (i + shift).is_multiple_of(7) {
                MemberStatus::Suspect
            } else {
                MemberStatus::Alive
            };
            let m = MemberState {
                node: NodeId(i),
                status,
                incarnation: (i + shift) % 3,
                last_update_time: i as f64,
            };
            (m.node, m)
        })
        .collect();
    SwarmView {
        swarm_id: SwarmId(NodeId(0)),
        members,
        view_version: shift,
    }
}

fn scheduler(c: &mut Criterion) {
    let params = SchedulerParams::default();
    let mut g = c.benchmark_group("place");
    for n in [6u64, 64, 512] {
        let cands = candidates(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &cands, |b, cands| {
            b.iter(|| place(false, black_box(cands), 30.0, &params))
        });
    }
    g.finish();
}

fn membership(c: &mut Criterion) {
    let mut g = c.benchmark_group("merge_views");
    for n in [16u64, 64, 256] {
        let (a, b) = (view(n, 1), view(n, 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &(a, b), |bench, (a, b)| {
            bench.iter(|| merge_views(black_box(a), black_box(b)))
        });
    }
    g.finish();
}

fn wire(c: &mut Criterion) {
    let env = Envelope {
        swarm: SwarmId(NodeId(1)),
        deltas: view(8, 0).members.into_values().collect(),
        body: Message::Ping { seq: 42 },
    };
    let bytes = encode(&env);
    c.bench_function("wire/encode_ping_8_deltas", |b| b.iter(|| encode(black_box(&env))));
    c.bench_function("wire/decode_ping_8_deltas", |b| b.iter(|| decode(black_box(&bytes))));
}

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    let steady = steady_state(1);
    g.bench_function("steady-state", |b| b.iter(|| run(&steady, Trace::hash_only()).unwrap()));
    let churn = heavy_churn(16, 1, ChurnShape::default());
    g.bench_function("heavy-churn-16", |b| {
        b.iter(|| run(&churn, Trace::hash_only()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, scheduler, membership, wire, simulation);
criterion_main!(benches);

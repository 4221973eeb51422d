//! Reference scenario generators. Every figure here is synthetic.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arrival, DataSourceConfig, NodeConfig, PartitionConfig, PredictorConfig, ScenarioConfig};
use crate::model::{
    Battery, DataInput, DataSourceId, NodeId, Position, QoSRequirement, StaticHardwareProfile, StaticSoftwareProfile,
    TaskId, TaskSpec,
};
use crate::scheduler::SchedulerParams;
use crate::sim::{ChurnEvent, ChurnKind, ChurnSchedule, NetModel};

const CENTER: Position = Position::new(200.0, 200.0);

fn layout_rng(seed: u64, what: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ crate::sim::rng::fnv1a64(what.as_bytes()))
}

/// A point at a uniform angle and a radius drawn from `[r0, r1)` around
/// the center.
fn ring(rng: &mut ChaCha8Rng, r0: f64, r1: f64) -> Position {
    let a = rng.gen_range(0.0..TAU);
    let r = rng.gen_range(r0..r1);
    Position::new(CENTER.x + r * a.cos(), CENTER.y + r * a.sin())
}

fn node(id: u64, at: Position, perf: f64, memory: u64, typologies: &[&str]) -> NodeConfig {
    NodeConfig {
        id: NodeId(id),
        position: at,
        battery: Battery::Mains,
        drain_rate: 0.0,
        hw: StaticHardwareProfile {
            cpu_perf_index: perf,
            memory,
            link_bandwidth: 5.0,
        },
        sw: StaticSoftwareProfile {
            os_tag: "linux".into(),
            supported_runtimes: BTreeSet::new(),
        },
        typologies: typologies.iter().map(|s| s.to_string()).collect(),
        background_load: 0.0,
        start: true,
    }
}

fn task(id: u64, origin: NodeId, typology: &str, work: f64, memory: u64, deadline: f64) -> TaskSpec {
    TaskSpec {
        task_id: TaskId(id),
        typology: typology.into(),
        work,
        memory_demand: memory,
        input_data: Vec::new(),
        qos: QoSRequirement::with_deadline(deadline),
        origin_node: origin,
    }
}

fn base(name: &str, seed: u64, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        seed,
        duration,
        net: NetModel::default(),
        scheduler: SchedulerParams::default(),
        predictor: PredictorConfig::default(),
        nodes: Vec::new(),
        data_sources: Vec::new(),
        churn: ChurnSchedule::default(),
        partitions: Vec::new(),
        workload: Vec::new(),
        replications: Vec::new(),
        moves: Vec::new(),
    }
}

/// Ten mixed nodes, fifty tasks, no churn. Sensors run their own light
/// tasks and offload inference.
pub fn steady_state(seed: u64) -> ScenarioConfig {
    let mut rng = layout_rng(seed, "steady-state");
    let mut cfg = base("steady-state", seed, 300.0);
    for id in 1..=2 {
        cfg.nodes
            .push(node(id, ring(&mut rng, 0.0, 60.0), 20.0, 4096, &["infer", "aggregate"]));
    }
    for id in 3..=6 {
        cfg.nodes
            .push(node(id, ring(&mut rng, 40.0, 150.0), 8.0, 1024, &["infer"]));
    }
    for id in 7..=10 {
        let mut n = node(id, ring(&mut rng, 60.0, 180.0), 2.0, 256, &["sense"]);
        n.battery = Battery::Level(0.9);
        n.drain_rate = 0.0005;
        n.background_load = 0.1;
        cfg.nodes.push(n);
    }
    let mut t = 5.0;
    for id in 1..=50 {
        t += rng.gen_range(0.0..9.0);
        let origin = NodeId(rng.gen_range(1..=10));
        let spec = if rng.gen_bool(0.3) {
            task(id, origin, "sense", rng.gen_range(2.0..10.0), 16, 30.0)
        } else {
            task(
                id,
                origin,
                "infer",
                rng.gen_range(40.0..160.0),
                rng.gen_range(64..512),
                60.0,
            )
        };
        cfg.workload.push(Arrival { time: t, task: spec });
    }
    cfg
}

/// Timing of the heavy-churn scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChurnShape {
    pub duration: f64,
    /// No churn event is scheduled after this time.
    pub churn_stop: f64,
    /// Last task arrival.
    pub workload_stop: f64,
    /// Task arrivals per second.
    pub arrival_rate: f64,
}

impl Default for ChurnShape {
    fn default() -> Self {
        Self {
            duration: 300.0,
            churn_stop: 240.0,
            workload_stop: 170.0,
            arrival_rate: 0.5,
        }
    }
}

/// `n` mains nodes: origins that cannot run the workload themselves, flaky
/// workers that keep crashing and rejoining, and stable workers. Flaky
/// workers sit closer to the origins than the stable ones.
pub fn heavy_churn(n: usize, seed: u64, shape: ChurnShape) -> ScenarioConfig {
    assert!(n >= 4, "heavy churn needs at least 4 nodes");
    let mut rng = layout_rng(seed, "heavy-churn");
    let mut cfg = base(&format!("heavy-churn-{n}"), seed, shape.duration);
    let origins = (n / 8).max(1);
    let flaky = (n * 3 / 8).max(1);
    let stable = n - origins - flaky;
    let mut id = 0;
    let mut next = || {
        id += 1;
        id
    };
    let origin_ids: Vec<NodeId> = (0..origins)
        .map(|_| {
            let i = next();
            cfg.nodes.push(node(i, ring(&mut rng, 0.0, 30.0), 4.0, 512, &["sense"]));
            NodeId(i)
        })
        .collect();
    let flaky_ids: Vec<NodeId> = (0..flaky)
        .map(|_| {
            let i = next();
            cfg.nodes
                .push(node(i, ring(&mut rng, 40.0, 70.0), 10.0, 1024, &["infer"]));
            NodeId(i)
        })
        .collect();
    for _ in 0..stable {
        let i = next();
        cfg.nodes
            .push(node(i, ring(&mut rng, 70.0, 180.0), 10.0, 1024, &["infer"]));
    }

    let mut events = Vec::new();
    for f in &flaky_ids {
        let mut t = rng.gen_range(0.0..10.0);
        loop {
            let session = rng.gen_range(8.0..30.0);
            let down = rng.gen_range(3.0..8.0);
            if t + session + down > shape.churn_stop {
                break;
            }
            let kind = if rng.gen_bool(0.2) {
                ChurnKind::Leave
            } else {
                ChurnKind::Crash
            };
            events.push(ChurnEvent {
                time: t + session,
                node: *f,
                kind,
            });
            events.push(ChurnEvent {
                time: t + session + down,
                node: *f,
                kind: ChurnKind::Join,
            });
            t += session + down;
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.node.cmp(&b.node)));
    cfg.churn = ChurnSchedule { events, jitter: 0.0 };

    let mut t = 5.0;
    let mut tid = 0;
    loop {
        t += rng.gen_range(0.0..2.0 / shape.arrival_rate);
        if t > shape.workload_stop {
            break;
        }
        tid += 1;
        let origin = origin_ids[rng.gen_range(0..origin_ids.len())];
        let spec = task(tid, origin, "infer", rng.gen_range(150.0..250.0), 256, 60.0);
        cfg.workload.push(Arrival { time: t, task: spec });
    }
    cfg
}

/// Two halves of six nodes cut apart from 60 s to 180 s. Each half has
/// its own origins and workers. Arrivals stop before the heal so the
/// registries can settle afterwards.
pub fn partition_heal(seed: u64) -> ScenarioConfig {
    let mut rng = layout_rng(seed, "partition-heal");
    let mut cfg = base("partition-heal", seed, 300.0);
    let mut halves = [BTreeSet::new(), BTreeSet::new()];
    for id in 1..=12u64 {
        let side = ((id - 1) / 6) as usize;
        let role = (id - 1) % 6;
        let n = if role < 2 {
            node(id, ring(&mut rng, 0.0, 150.0), 4.0, 512, &["sense"])
        } else {
            node(id, ring(&mut rng, 0.0, 150.0), 10.0, 1024, &["infer"])
        };
        halves[side].insert(NodeId(id));
        cfg.nodes.push(n);
    }
    cfg.partitions.push(PartitionConfig {
        group_a: halves[0].clone(),
        group_b: halves[1].clone(),
        start: 60.0,
        end: 180.0,
    });
    let origins = [1, 2, 7, 8];
    let mut t = 5.0;
    for id in 1..=60 {
        t += rng.gen_range(0.0..8.0);
        if t > 160.0 {
            break;
        }
        let origin = NodeId(origins[rng.gen_range(0..origins.len())]);
        let spec = task(id, origin, "infer", rng.gen_range(60.0..150.0), 256, 60.0);
        cfg.workload.push(Arrival { time: t, task: spec });
    }
    cfg
}

/// Sensors submit tasks reading data sources that are held by a few
/// workers; moving the computation to a holder avoids the transfer.
pub fn data_locality(seed: u64) -> ScenarioConfig {
    let mut rng = layout_rng(seed, "data-locality");
    let mut cfg = base("data-locality", seed, 300.0);
    // the first ACCEPT wins, so offers go only to as many nodes as hold each source
    cfg.scheduler.k = 2;
    let sensors: Vec<NodeId> = (1..=4).map(NodeId).collect();
    for s in &sensors {
        cfg.nodes
            .push(node(s.0, ring(&mut rng, 0.0, 120.0), 2.0, 256, &["sense"]));
    }
    let workers: Vec<NodeId> = (5..=16).map(NodeId).collect();
    for w in &workers {
        cfg.nodes
            .push(node(w.0, ring(&mut rng, 0.0, 180.0), 10.0, 2048, &["infer"]));
    }
    for d in 1..=6u64 {
        let owner = workers[rng.gen_range(0..workers.len())];
        let mut replica = owner;
        while replica == owner {
            replica = workers[rng.gen_range(0..workers.len())];
        }
        cfg.data_sources.push(DataSourceConfig {
            id: DataSourceId(d),
            owner,
            size: rng.gen_range(20.0..60.0),
            replicas: [replica].into(),
        });
    }
    let mut t = 10.0;
    for id in 1..=80 {
        t += rng.gen_range(0.0..6.0);
        if t > 260.0 {
            break;
        }
        let origin = sensors[rng.gen_range(0..sensors.len())];
        let source = &cfg.data_sources[rng.gen_range(0..cfg.data_sources.len())];
        let mut spec = task(id, origin, "infer", rng.gen_range(40.0..120.0), 256, 90.0);
        spec.input_data.push(DataInput {
            source: source.id,
            size: source.size,
        });
        cfg.workload.push(Arrival { time: t, task: spec });
    }
    cfg
}

/// One origin, four workers and one long task: the harness for crashing
/// an executor mid-run.
pub fn self_healing(seed: u64) -> ScenarioConfig {
    let mut rng = layout_rng(seed, "self-healing");
    let mut cfg = base("self-healing", seed, 60.0);
    cfg.nodes.push(node(1, ring(&mut rng, 0.0, 50.0), 4.0, 512, &["sense"]));
    for id in 2..=5 {
        cfg.nodes
            .push(node(id, ring(&mut rng, 20.0, 180.0), 10.0, 1024, &["infer"]));
    }
    cfg.workload.push(Arrival {
        time: 5.0,
        task: task(1, NodeId(1), "infer", 300.0, 256, 120.0),
    });
    cfg
}

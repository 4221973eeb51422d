//! Runs one scenario under several scheduler settings over a shared seed
//! list and tabulates the outcome.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{mean, MetricsReport};
use crate::runner::{run, RunError};
use crate::scenario::ScenarioConfig;
use crate::scheduler::{SchedulerParams, Weights};
use crate::sim::Trace;

/// Scheduler fields a variant replaces; absent fields keep the scenario's
/// value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub weights: Option<Weights>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
    #[serde(default)]
    pub locality_scale: Option<f64>,
}

impl Variant {
    pub fn apply(&self, base: &SchedulerParams) -> SchedulerParams {
        SchedulerParams {
            weights: self.weights.unwrap_or(base.weights),
            k: self.k.unwrap_or(base.k),
            max_attempts: self.max_attempts.unwrap_or(base.max_attempts),
            locality_scale: self.locality_scale.unwrap_or(base.locality_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantFile {
    #[serde(rename = "variant")]
    pub variants: Vec<Variant>,
}

impl VariantFile {
    pub fn from_toml(text: &str) -> Result<Self, CompareError> {
        toml::from_str(text).map_err(|e| CompareError::Parse(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("variants: {0}")]
    Parse(String),
    #[error("need at least 2 variants, got {0}")]
    TooFewVariants(usize),
    #[error("duplicate variant name {0:?}")]
    DuplicateName(String),
    #[error("no seeds given")]
    NoSeeds,
    #[error("variant {variant}, seed {seed}")]
    Run {
        variant: String,
        seed: u64,
        #[source]
        source: RunError,
    },
}

/// Every run's report, indexed `[variant][seed]`.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub reports: Vec<Vec<MetricsReport>>,
}

/// Runs every variant on `base` at every seed. Runs are independent and
/// spread over threads; results do not depend on the schedule.
pub fn compare(base: &ScenarioConfig, variants: &[Variant], seeds: &[u64]) -> Result<Comparison, CompareError> {
    compare_with(variants, seeds, |seed| {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg
    })
}

/// Like [`compare`], but the scenario itself is rebuilt for each seed.
pub fn compare_with(
    variants: &[Variant],
    seeds: &[u64],
    scenario: impl Fn(u64) -> ScenarioConfig + Sync,
) -> Result<Comparison, CompareError> {
    if variants.len() < 2 {
        return Err(CompareError::TooFewVariants(variants.len()));
    }
    if seeds.is_empty() {
        return Err(CompareError::NoSeeds);
    }
    let mut names = BTreeSet::new();
    for v in variants {
        if !names.insert(&v.name) {
            return Err(CompareError::DuplicateName(v.name.clone()));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |s| (v, *s)))
        .collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = jobs.len().div_ceil(workers);
    let results: Vec<Result<MetricsReport, CompareError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                let scenario = &scenario;
                scope.spawn(move || {
                    part.iter()
                        .map(|(v, seed)| {
                            let variant = &variants[*v];
                            let mut cfg = scenario(*seed);
                            cfg.scheduler = variant.apply(&cfg.scheduler);
                            run(&cfg, Trace::hash_only())
                                .map(|r| r.metrics)
                                .map_err(|source| CompareError::Run {
                                    variant: variant.name.clone(),
                                    seed: *seed,
                                    source,
                                })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("comparison worker panicked"))
            .collect()
    });
    let mut reports: Vec<Vec<MetricsReport>> = vec![Vec::with_capacity(seeds.len()); variants.len()];
    for ((v, _), r) in jobs.iter().zip(results) {
        reports[*v].push(r?);
    }
    Ok(Comparison {
        variants: variants.iter().map(|v| v.name.clone()).collect(),
        seeds: seeds.to_vec(),
        reports,
    })
}

impl Comparison {
    /// Metric names of all reports in first-seen order. A message type
    /// missing from one run counts as zero there.
    pub fn metrics(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in self.reports.iter().flatten() {
            for (k, _) in r.rows() {
                if seen.insert(k.clone()) {
                    out.push(k);
                }
            }
        }
        out
    }

    fn value(&self, variant: usize, seed: usize, metric: &str) -> f64 {
        self.reports[variant][seed].get(metric).unwrap_or(0.0)
    }

    pub fn mean(&self, variant: usize, metric: &str) -> f64 {
        let v: Vec<f64> = (0..self.seeds.len()).map(|s| self.value(variant, s, metric)).collect();
        mean(&v)
    }

    /// `variant − first variant` at each seed.
    pub fn paired_differences(&self, variant: usize, metric: &str) -> Vec<f64> {
        (0..self.seeds.len())
            .map(|s| self.value(variant, s, metric) - self.value(0, s, metric))
            .collect()
    }

    /// `variant,metric,mean` rows.
    pub fn means_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "metric", "mean"]).expect("in-memory write");
        for m in self.metrics() {
            for (i, name) in self.variants.iter().enumerate() {
                w.write_record([name.as_str(), &m, &self.mean(i, &m).to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// `seed,variant,metric,difference` rows against the first variant.
    pub fn differences_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "variant", "metric", "difference"])
            .expect("in-memory write");
        for m in self.metrics() {
            for (i, name) in self.variants.iter().enumerate().skip(1) {
                for (seed, d) in self.seeds.iter().zip(self.paired_differences(i, &m)) {
                    w.write_record([&seed.to_string(), name.as_str(), &m, &d.to_string()])
                        .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

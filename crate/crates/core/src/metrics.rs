//! Run summary written as a two-column `metric,value` table.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Count(u64),
    Real(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Count(c) => c as f64,
            Value::Real(r) => r,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Count(c) => write!(f, "{c}"),
            Value::Real(r) if r.is_nan() => f.write_str("NaN"),
            Value::Real(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsReport {
    pub tasks_submitted: u64,
    pub tasks_done: u64,
    /// Includes tasks whose origin went down before they resolved.
    pub tasks_failed_permanent: u64,
    pub tasks_in_flight: u64,
    pub tasks_origin_lost: u64,
    /// Arrivals at an origin that was down at the time.
    pub tasks_not_submitted: u64,
    /// Late completions, permanent failures, and unresolved tasks past
    /// their deadline at the end of the run.
    pub deadline_violations: u64,
    pub latency_mean: f64,
    pub latency_p95: f64,
    pub mean_transfer_time: f64,
    /// Failure-triggered re-placements.
    pub replacements: u64,
    pub speculative_attempts: u64,
    /// (replacements + permanent failures) / submitted.
    pub failure_rate: f64,
    pub local_admissions: u64,
    pub offloaded_placements: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub messages_by_type: BTreeMap<String, u64>,
    /// Seconds from the last disturbance (churn, partition heal) until
    /// member sets agreed for good; NaN if they never did.
    pub membership_convergence_time: f64,
    pub registry_convergence_time: f64,
    /// Rises and falls in the number of distinct swarm ids between
    /// consecutive samples.
    pub swarm_split_events: u64,
    pub swarm_merge_events: u64,
    pub utilization_mean: f64,
    pub utilization_min: f64,
    pub utilization_max: f64,
    pub replications_done: u64,
    pub replications_aborted: u64,
    pub replications_failed: u64,
}

/// Nearest-rank percentile of an unsorted sample; 0 for an empty one.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl MetricsReport {
    /// Rows in output order.
    pub fn rows(&self) -> Vec<(String, Value)> {
        use Value::{Count as C, Real as R};
        let mut rows = vec![
            ("tasks_submitted".to_owned(), C(self.tasks_submitted)),
            ("tasks_done".into(), C(self.tasks_done)),
            ("tasks_failed_permanent".into(), C(self.tasks_failed_permanent)),
            ("tasks_in_flight".into(), C(self.tasks_in_flight)),
            ("tasks_origin_lost".into(), C(self.tasks_origin_lost)),
            ("tasks_not_submitted".into(), C(self.tasks_not_submitted)),
            ("deadline_violations".into(), C(self.deadline_violations)),
            ("latency_mean".into(), R(self.latency_mean)),
            ("latency_p95".into(), R(self.latency_p95)),
            ("mean_transfer_time".into(), R(self.mean_transfer_time)),
            ("replacements".into(), C(self.replacements)),
            ("speculative_attempts".into(), C(self.speculative_attempts)),
            ("failure_rate".into(), R(self.failure_rate)),
            ("local_admissions".into(), C(self.local_admissions)),
            ("offloaded_placements".into(), C(self.offloaded_placements)),
            ("messages_sent".into(), C(self.messages_sent)),
            ("messages_delivered".into(), C(self.messages_delivered)),
            ("messages_dropped".into(), C(self.messages_dropped)),
        ];
        for (label, n) in &self.messages_by_type {
            rows.push((format!("messages_{label}"), C(*n)));
        }
        rows.extend([
            (
                "membership_convergence_time".into(),
                R(self.membership_convergence_time),
            ),
            ("registry_convergence_time".into(), R(self.registry_convergence_time)),
            ("swarm_split_events".into(), C(self.swarm_split_events)),
            ("swarm_merge_events".into(), C(self.swarm_merge_events)),
            ("utilization_mean".into(), R(self.utilization_mean)),
            ("utilization_min".into(), R(self.utilization_min)),
            ("utilization_max".into(), R(self.utilization_max)),
            ("replications_done".into(), C(self.replications_done)),
            ("replications_aborted".into(), C(self.replications_aborted)),
            ("replications_failed".into(), C(self.replications_failed)),
        ]);
        rows
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows()
            .into_iter()
            .find(|(k, _)| k == metric)
            .map(|(_, v)| v.as_f64())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"]).expect("in-memory write");
        for (k, v) in self.rows() {
            w.write_record([k, v.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// The accounting identity every run must satisfy.
    pub fn balanced(&self) -> bool {
        self.tasks_done + self.tasks_failed_permanent + self.tasks_in_flight == self.tasks_submitted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentile() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        assert_eq!(percentile(&[], 95.0), 0.0);
    }

    #[test]
    fn empty_report_is_balanced_and_zero() {
        let r = MetricsReport::default();
        assert!(r.balanced());
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value\ntasks_submitted,0\n"));
        assert_eq!(r.get("tasks_done"), Some(0.0));
    }

    #[test]
    fn message_counts_become_rows() {
        let mut r = MetricsReport::default();
        r.messages_by_type.insert("OFFER".into(), 4);
        assert_eq!(r.get("messages_OFFER"), Some(4.0));
        r.membership_convergence_time = f64::NAN;
        assert!(r.to_csv().contains("membership_convergence_time,NaN\n"));
    }
}

//! Per-run records and their aggregation across seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::lifecycle::PolicyKind;
use crate::tensor::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
    /// Inactive filters at the end of the epoch, before any reactivation.
    pub inactive: usize,
}

/// Everything measured in one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub policy: PolicyKind,
    pub config_digest: u64,
    pub dataset_digest: u64,
    pub precision: Precision,
    /// Desk-scale eval accuracy; `None` when the eval split is empty.
    pub eval_accuracy: Option<f64>,
    pub final_inactive: usize,
    pub unique_patterns: usize,
    pub unique_patterns_active: usize,
    pub reactivations: usize,
    pub stuck_violations: usize,
    pub standardization: Standardization,
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EvalAccuracy,
    FinalInactive,
    UniquePatterns,
    Reactivations,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::EvalAccuracy,
        Metric::FinalInactive,
        Metric::UniquePatterns,
        Metric::Reactivations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::EvalAccuracy => "eval_accuracy",
            Metric::FinalInactive => "final_inactive",
            Metric::UniquePatterns => "unique_patterns",
            Metric::Reactivations => "reactivations",
        }
    }

    pub fn of(self, run: &RunRecord) -> Option<f64> {
        match self {
            Metric::EvalAccuracy => run.eval_accuracy,
            Metric::FinalInactive => Some(run.final_inactive as f64),
            Metric::UniquePatterns => Some(run.unique_patterns as f64),
            Metric::Reactivations => Some(run.reactivations as f64),
        }
    }

    /// Whether larger values are better when picking best/worst runs.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::FinalInactive | Metric::Reactivations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); 0 when `n == 1`.
    pub std: f64,
    /// Set when `n == 1` and `std` is 0 by convention.
    pub single_run: bool,
    pub best_seed: u64,
    pub best: f64,
    pub worst_seed: u64,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: PolicyKind,
    pub metrics: Vec<MetricSummary>,
}

impl PolicyAggregate {
    pub fn metric(&self, m: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|s| s.metric == m)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(metric: Metric, runs: &[&RunRecord]) -> Option<MetricSummary> {
    let vals: Vec<(u64, f64)> = runs.iter().filter_map(|r| metric.of(r).map(|v| (r.seed, v))).collect();
    if vals.is_empty() {
        return None;
    }
    let values: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let (mean, std) = mean_std(&values);
    let better = |a: f64, b: f64| if metric.higher_is_better() { a > b } else { a < b };
    let mut best = vals[0];
    let mut worst = vals[0];
    for &v in &vals[1..] {
        if better(v.1, best.1) {
            best = v;
        }
        if better(worst.1, v.1) {
            worst = v;
        }
    }
    Some(MetricSummary {
        metric,
        n: vals.len(),
        mean,
        std,
        single_run: vals.len() == 1,
        best_seed: best.0,
        best: best.1,
        worst_seed: worst.0,
        worst: worst.1,
    })
}

/// Per-policy summaries of every metric, in policy order.
pub fn aggregate(runs: &[RunRecord]) -> Vec<PolicyAggregate> {
    let mut by_policy: BTreeMap<PolicyKind, Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        by_policy.entry(r.policy).or_default().push(r);
    }
    by_policy
        .into_iter()
        .map(|(policy, rs)| PolicyAggregate {
            policy,
            metrics: Metric::ALL.iter().filter_map(|&m| summarize(m, &rs)).collect(),
        })
        .collect()
}

/// Plain-text table of mean ± std per policy plus best/worst accuracy rows.
pub fn format_table(aggregates: &[PolicyAggregate]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>3} {:>20} {:>16} {:>16}",
        "policy", "n", "eval acc (%)", "final inactive", "unique patterns"
    );
    let cell = |s: Option<&MetricSummary>, scale: f64, prec: usize| match s {
        Some(s) => format!("{:.p$} ± {:.p$}", s.mean * scale, s.std * scale, p = prec),
        None => "-".to_string(),
    };
    for a in aggregates {
        let n = a.metrics.iter().map(|m| m.n).max().unwrap_or(0);
        let _ = writeln!(
            out,
            "{:<24} {:>3} {:>20} {:>16} {:>16}",
            a.policy.name(),
            n,
            cell(a.metric(Metric::EvalAccuracy), 100.0, 2),
            cell(a.metric(Metric::FinalInactive), 1.0, 1),
            cell(a.metric(Metric::UniquePatterns), 1.0, 1),
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<24} {:>18} {:>18}",
        "policy", "best acc (seed)", "worst acc (seed)"
    );
    for a in aggregates {
        if let Some(s) = a.metric(Metric::EvalAccuracy) {
            let _ = writeln!(
                out,
                "{:<24} {:>18} {:>18}",
                a.policy.name(),
                format!("{:.2} ({})", s.best * 100.0, s.best_seed),
                format!("{:.2} ({})", s.worst * 100.0, s.worst_seed),
            );
        }
    }
    let _ = writeln!(
        out,
        "\naccuracies are desk-scale eval accuracy on synthetic data, not comparable to large-scale benchmark numbers"
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64, policy: PolicyKind, acc: f64, inactive: usize) -> RunRecord {
        RunRecord {
            seed,
            policy,
            config_digest: 0,
            dataset_digest: 0,
            precision: Precision::F32,
            eval_accuracy: Some(acc),
            final_inactive: inactive,
            unique_patterns: 3,
            unique_patterns_active: 2,
            reactivations: 0,
            stuck_violations: 0,
            standardization: Standardization {
                mean: [0.0; 3],
                std: [1.0; 3],
            },
            epochs: vec![],
        }
    }

    #[test]
    fn sample_std_and_single_run_flag() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let runs = [run(4, PolicyKind::Baseline, 0.7, 2)];
        let agg = aggregate(&runs);
        let acc = agg[0].metric(Metric::EvalAccuracy).unwrap();
        assert_eq!((acc.n, acc.std, acc.single_run), (1, 0.0, true));
    }

    #[test]
    fn best_and_worst_respect_direction() {
        let runs = vec![
            run(0, PolicyKind::Baseline, 0.5, 1),
            run(1, PolicyKind::Baseline, 0.9, 4),
            run(2, PolicyKind::Baseline, 0.7, 0),
            run(0, PolicyKind::DirectedComplementary, 0.8, 0),
        ];
        let agg = aggregate(&runs);
        assert_eq!(agg.len(), 2);
        let acc = agg[0].metric(Metric::EvalAccuracy).unwrap();
        assert_eq!((acc.best_seed, acc.worst_seed), (1, 0));
        assert!((acc.mean - 0.7).abs() < 1e-15);
        let inact = agg[0].metric(Metric::FinalInactive).unwrap();
        assert_eq!((inact.best_seed, inact.worst_seed), (2, 1));
        assert!(format_table(&agg).contains("directed_complementary"));
    }
}

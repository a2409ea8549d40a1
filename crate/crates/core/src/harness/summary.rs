//! Monte-Carlo bias summaries.
//!
//! `B̂ = mean(τ̂ᵢ) − τ` and `mc_se = sqrt(Σ(τ̂ᵢ − τ̄)² / (k(k − 1)))` over the
//! `k` converged replications of a cell. Estimates are sorted before any
//! reduction, so the summary does not depend on replication order.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::estimators::{Engine, Estimator, Handler};
use crate::stats::normal_quantile;

use super::grid::{CellStatus, ReplicationResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSummary {
    pub scenario: String,
    pub estimator: Estimator,
    pub handler: Handler,
    pub engine: Engine,
    pub bias: Option<f64>,
    pub mc_se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_converged: usize,
    pub n_reps: usize,
    pub mean_abs_error: Option<f64>,
    /// Share of bootstrap intervals containing the truth.
    pub coverage: Option<f64>,
    pub n_intervals: usize,
}

impl BiasSummary {
    /// `|B̂| ≤ k · mc_se`; false when either is absent.
    pub fn within(&self, k: f64) -> bool {
        matches!((self.bias, self.mc_se), (Some(b), Some(se)) if b.abs() <= k * se)
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.estimator, self.handler, self.engine)
    }
}

type Key = (String, Estimator, Handler, Engine);

#[derive(Default)]
struct Acc {
    estimates: Vec<f64>,
    reps: usize,
    covered: usize,
    intervals: usize,
}

/// Summaries in order of first appearance of (scenario, method).
///
/// Scenarios missing from `truths` are skipped with a warning.
pub fn summarize_bias(results: &[ReplicationResult], truths: &BTreeMap<String, f64>) -> Vec<BiasSummary> {
    let mut order: Vec<Key> = Vec::new();
    let mut acc: BTreeMap<Key, Acc> = BTreeMap::new();
    for r in results {
        let Some(&truth) = truths.get(&r.scenario) else {
            log::warn!("no ground truth for scenario `{}`; skipped", r.scenario);
            continue;
        };
        for c in &r.cells {
            let key = (r.scenario.clone(), c.spec.estimator, c.spec.handler, c.spec.engine);
            let a = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                Acc::default()
            });
            a.reps += 1;
            if let (CellStatus::Ok, Some(v)) = (c.status, c.estimate) {
                a.estimates.push(v);
                if let (Some(lo), Some(hi)) = (c.ci_low, c.ci_high) {
                    a.intervals += 1;
                    a.covered += usize::from(lo <= truth && truth <= hi);
                }
            }
        }
    }
    let z = normal_quantile(0.975);
    order
        .into_iter()
        .map(|key| {
            let a = acc.remove(&key).expect("key recorded");
            let truth = truths[&key.0];
            let mut est = a.estimates;
            est.sort_by(f64::total_cmp);
            let k = est.len();
            let mean = (k > 0).then(|| est.iter().sum::<f64>() / k as f64);
            let bias = mean.map(|m| m - truth);
            let mc_se = match (k, mean) {
                (k, Some(m)) if k >= 2 => {
                    let mut dev: Vec<f64> = est.iter().map(|v| (v - m) * (v - m)).collect();
                    dev.sort_by(f64::total_cmp);
                    Some((dev.iter().sum::<f64>() / (k * (k - 1)) as f64).sqrt())
                }
                (1, _) => {
                    log::warn!(
                        "{}: {}/{}/{} has one converged replication; no Monte-Carlo SE",
                        key.0,
                        key.1,
                        key.2,
                        key.3
                    );
                    None
                }
                _ => None,
            };
            let mut abs: Vec<f64> = est.iter().map(|v| (v - truth).abs()).collect();
            abs.sort_by(f64::total_cmp);
            BiasSummary {
                scenario: key.0,
                estimator: key.1,
                handler: key.2,
                engine: key.3,
                bias,
                mc_se,
                ci_low: bias.zip(mc_se).map(|(b, s)| b - z * s),
                ci_high: bias.zip(mc_se).map(|(b, s)| b + z * s),
                n_converged: k,
                n_reps: a.reps,
                mean_abs_error: (k > 0).then(|| abs.iter().sum::<f64>() / k as f64),
                coverage: (a.intervals > 0).then(|| a.covered as f64 / a.intervals as f64),
                n_intervals: a.intervals,
            }
        })
        .collect()
}

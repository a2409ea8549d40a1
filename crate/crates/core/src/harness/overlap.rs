//! Overlap of fitted membership scores between the two sources.

use serde::Serialize;

use crate::data::{complete_cases, StackedSample};
use crate::error::Result;
use crate::estimators::{estimate_density_ratio, impute_for, Engine, Estimator, Handler, MethodSpec};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    /// Share of trial rows in the bin.
    pub trial: f64,
    /// Share of target rows in the bin.
    pub target: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapReport {
    /// Membership score `π̂ = P(trial | x)` per analysed row.
    pub scores: Vec<f64>,
    /// `true` for trial rows.
    pub in_trial: Vec<bool>,
    pub histogram: Vec<HistogramBin>,
    /// `Σ_bins min(trial share, target share)`, in `[0, 1]`.
    pub overlap_coefficient: f64,
}

/// Equal-width histogram on `[0, 1]`; the last bin is closed.
pub fn histogram(scores: &[f64], in_trial: &[bool], bins: usize) -> Vec<HistogramBin> {
    let mut counts = vec![(0usize, 0usize); bins];
    for (&s, &t) in scores.iter().zip(in_trial) {
        let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        if t {
            counts[b].0 += 1;
        } else {
            counts[b].1 += 1;
        }
    }
    let nt = in_trial.iter().filter(|&&t| t).count().max(1) as f64;
    let no = in_trial.iter().filter(|&&t| !t).count().max(1) as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| HistogramBin {
            low: i as f64 / bins as f64,
            high: (i + 1) as f64 / bins as f64,
            trial: a as f64 / nt,
            target: b as f64 / no,
        })
        .collect()
}

pub fn overlap_coefficient(h: &[HistogramBin]) -> f64 {
    h.iter().map(|b| b.trial.min(b.target)).sum()
}

/// Fits the membership model as the weighting estimators would and bins
/// the scores by source.
///
/// Imputation handlers score the first completed dataset.
pub fn overlap_diagnostics(s: &StackedSample, engine: Engine, handler: Handler, seed: u64) -> Result<OverlapReport> {
    let spec = MethodSpec::new(Estimator::Ipsw, engine, handler);
    spec.validate()?;
    let data = match handler {
        Handler::None => {
            s.require_complete()?;
            s.clone()
        }
        Handler::Cc => complete_cases(s)?,
        Handler::Em | Handler::Mia => s.clone(),
        Handler::WiMi | Handler::AhMi | Handler::FeMi => {
            let mut one = spec.clone();
            one.mice.imputations = 1;
            impute_for(s, &one, seed)?.swap_remove(0)
        }
    };
    let dr = estimate_density_ratio(&data, &spec.learner(), seed)?;
    let in_trial = data.source();
    let histogram = histogram(&dr.scores, &in_trial, HISTOGRAM_BINS);
    Ok(OverlapReport {
        overlap_coefficient: overlap_coefficient(&histogram),
        scores: dr.scores,
        in_trial,
        histogram,
    })
}

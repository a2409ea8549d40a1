//! Stratified nonparametric bootstrap over trial and target rows.

use rand::Rng;

use crate::data::StackedSample;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive, stream};
use crate::stats::{quantile_sorted, sample_variance};

use super::spec::MethodSpec;

/// Largest tolerated share of failed resamples.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    /// Successful replicate estimates in resample order.
    pub estimates: Vec<f64>,
    pub failures: usize,
    pub variance: f64,
    /// 2.5% and 97.5% percentiles (linear interpolation).
    pub low: f64,
    pub high: f64,
}

/// Resamples trial rows and target rows independently, with replacement,
/// keeping both sizes.
pub fn stratified_resample<R: Rng + ?Sized>(s: &StackedSample, rng: &mut R) -> StackedSample {
    let n = s.n_trial();
    let m = s.n_target();
    let trial: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let target: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
    s.select(&trial, &target)
}

/// Evaluates `f` on `b` stratified resamples.
///
/// A replicate fails when `f` errors, reports non-convergence or returns a
/// non-finite value. More than [`MAX_FAILURE_RATE`] failures is an error.
pub fn bootstrap_values<F>(s: &StackedSample, b: usize, seed: u64, f: F) -> Result<BootstrapSummary>
where
    F: Fn(&StackedSample, u64) -> Result<(f64, bool)> + Sync + Send,
{
    if b < 2 {
        return Err(Error::Spec(format!(
            "the bootstrap needs at least 2 resamples, got {b}"
        )));
    }
    let results = par::map_indexed(b, |k| {
        let rs = derive(seed, k as u64);
        let mut rng = stream(derive(rs, 0));
        let sample = stratified_resample(s, &mut rng);
        match f(&sample, derive(rs, 1)) {
            Ok((v, true)) if v.is_finite() => Some(v),
            _ => None,
        }
    });
    let estimates: Vec<f64> = results.into_iter().flatten().collect();
    let failures = b - estimates.len();
    if failures as f64 > MAX_FAILURE_RATE * b as f64 || estimates.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "{failures} of {b} bootstrap resamples failed (limit {:.0}%)",
            100.0 * MAX_FAILURE_RATE
        )));
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        variance: sample_variance(&estimates),
        low: quantile_sorted(&sorted, 0.025),
        high: quantile_sorted(&sorted, 0.975),
        estimates,
        failures,
    })
}

/// Bootstraps the whole handler pipeline, imputation included.
///
/// Nested within-imputation bootstraps are switched off inside replicates.
pub fn bootstrap_ci(s: &StackedSample, spec: &MethodSpec, b: usize, seed: u64) -> Result<BootstrapSummary> {
    let mut inner = spec.clone();
    inner.pooling_bootstrap = 0;
    bootstrap_values(s, b, seed, |sample, rs| {
        super::estimate(sample, &inner, rs).map(|r| (r.estimate, r.converged()))
    })
}

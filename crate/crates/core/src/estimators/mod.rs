//! Generalization estimators and the handler dispatch around them.
//!
//! Complete-data estimators run on fully observed stacked samples (the
//! `none`, `cc` and multiple-imputation handlers). The EM and MIA handlers
//! instead fit every nuisance on the masked covariates, so the same
//! formulas yield the star-variants.

pub mod bootstrap;
pub mod learner;
pub mod spec;
pub mod weighting;

use std::collections::BTreeMap;

use crate::data::{complete_cases, EstimateReport, EstimateStatus, MaskedMatrix, StackedSample, TrialSample};
use crate::error::{Error, Result};
use crate::imputation::{multi_impute, rubin_pool};
use crate::par;
use crate::rng::{derive, derive_named};
use crate::stats::normal_quantile;

pub use bootstrap::{bootstrap_ci, stratified_resample, BootstrapSummary};
pub use learner::{Learner, Task};
pub use spec::{Engine, Estimator, Handler, MethodSpec, Moments};
pub use weighting::{
    calibration_weights, cw_estimate, diff_in_means, estimate_density_ratio, ipsw, ratio_from_score, DensityRatio,
};

impl MethodSpec {
    /// Nuisance learner implied by the handler and engine.
    pub fn learner(&self) -> Learner {
        match (self.handler, self.engine) {
            (Handler::Em, _) => Learner::EmGlm { draws: self.em_draws },
            (_, Engine::Forest) => Learner::Forest(self.forest.clone()),
            (_, Engine::Parametric) => Learner::Glm,
        }
    }
}

/// Arm-wise outcome-model predictions on trial and target rows.
#[derive(Debug, Clone)]
pub struct OutcomePredictions {
    pub mu1_trial: Vec<f64>,
    pub mu0_trial: Vec<f64>,
    pub mu1_target: Vec<f64>,
    pub mu0_target: Vec<f64>,
    pub converged: bool,
}

/// Fits `μ̂_a` on the trial rows with `A = a` and predicts everywhere.
///
/// Trial rows of arm `a` receive training predictions (out-of-bag for
/// forests); all other rows receive ordinary predictions.
pub fn fit_outcome_models(s: &StackedSample, learner: &Learner, seed: u64) -> Result<OutcomePredictions> {
    let (trial, target) = s.split();
    trial.require_both_arms()?;
    let p = trial.covariates.ncols();
    let mut out = OutcomePredictions {
        mu1_trial: vec![0.0; trial.len()],
        mu0_trial: vec![0.0; trial.len()],
        mu1_target: Vec::new(),
        mu0_target: Vec::new(),
        converged: true,
    };
    for arm in [true, false] {
        let rows: Vec<usize> = (0..trial.len()).filter(|&i| trial.treatment[i] == arm).collect();
        let others: Vec<usize> = (0..trial.len()).filter(|&i| trial.treatment[i] != arm).collect();
        let needed = match learner {
            Learner::Forest(fp) => 2 * fp.min_leaf,
            _ => p + 2,
        };
        if rows.len() < needed {
            return Err(Error::DegenerateSample(format!(
                "arm A={} has {} rows; the outcome model needs at least {needed}",
                u8::from(arm),
                rows.len()
            )));
        }
        let x = trial.covariates.select_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|&i| trial.outcome[i]).collect();
        let fit = learner.fit(&x, &y, Task::Regression, derive(seed, u64::from(arm)))?;
        out.converged &= fit.converged;
        let other_pred = fit.model.predict(&trial.covariates.select_rows(&others))?;
        let target_pred = fit.model.predict(&target.covariates)?;
        let dest = if arm { &mut out.mu1_trial } else { &mut out.mu0_trial };
        for (&i, v) in rows.iter().zip(&fit.training) {
            dest[i] = *v;
        }
        for (&i, v) in others.iter().zip(&other_pred) {
            dest[i] = *v;
        }
        if arm {
            out.mu1_target = target_pred;
        } else {
            out.mu0_target = target_pred;
        }
    }
    Ok(out)
}

/// `(1/m) Σ_target (μ̂₁ − μ̂₀)`.
pub fn conditional_outcome(mu1_target: &[f64], mu0_target: &[f64]) -> Result<f64> {
    if mu1_target.len() != mu0_target.len() || mu1_target.is_empty() {
        return Err(Error::Contract(
            "target predictions must be non-empty and paired".into(),
        ));
    }
    let m = mu1_target.len() as f64;
    Ok(mu1_target.iter().zip(mu0_target).map(|(a, b)| a - b).sum::<f64>() / m)
}

/// `(2/n) Σ r̂ᵢ[Aᵢ(Yᵢ − μ̂₁) − (1 − Aᵢ)(Yᵢ − μ̂₀)] + (1/m) Σ_target (μ̂₁ − μ̂₀)`
/// at propensity 0.5; other propensities replace the factor 2 per arm.
pub fn aipsw(t: &TrialSample, rhat: &[f64], mu: &OutcomePredictions, propensity: f64) -> Result<f64> {
    weighting::check_propensity(propensity)?;
    let n = t.len();
    if rhat.len() != n || mu.mu1_trial.len() != n || mu.mu0_trial.len() != n {
        return Err(Error::Contract("AIPSW components must cover every trial row".into()));
    }
    let mut correction = 0.0;
    for i in 0..n {
        let y = t.outcome[i];
        let fitted = if t.treatment[i] {
            mu.mu1_trial[i]
        } else {
            mu.mu0_trial[i]
        };
        correction += weighting::arm_factor(t.treatment[i], propensity) * rhat[i] * (y - fitted);
    }
    Ok(correction / n as f64 + conditional_outcome(&mu.mu1_target, &mu.mu0_target)?)
}

/// Calibration moments `g(x)` for complete covariates, row-major.
pub fn calibration_moments(x: &MaskedMatrix, moments: Moments) -> Result<(Vec<f64>, usize)> {
    if !x.is_complete() {
        return Err(Error::Contract("calibration moments need complete covariates".into()));
    }
    let p = x.ncols();
    let k = match moments {
        Moments::First => p,
        Moments::FirstSecond => 2 * p,
    };
    let mut g = Vec::with_capacity(x.nrows() * k);
    for i in 0..x.nrows() {
        let r = x.row_raw(i);
        g.extend_from_slice(r);
        if moments == Moments::FirstSecond {
            g.extend(r.iter().map(|v| v * v));
        }
    }
    Ok((g, k))
}

/// A point estimate and the fit diagnostics gathered on the way.
#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub value: f64,
    pub converged: bool,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Runs one estimator on data already prepared for the handler.
pub fn point_estimate(s: &StackedSample, spec: &MethodSpec, seed: u64) -> Result<PointEstimate> {
    let (trial, target) = s.split();
    let learner = spec.learner();
    let mut diagnostics = BTreeMap::new();
    let mut converged = true;
    let value = match spec.estimator {
        Estimator::Dm => diff_in_means(&trial)?,
        Estimator::Ipsw => {
            let dr = estimate_density_ratio(s, &learner, derive_named(seed, "membership"))?;
            converged &= dr.converged;
            ratio_diagnostics(&mut diagnostics, &dr.ratios);
            ipsw(&trial, &dr.ratios, spec.stabilized, spec.propensity)?
        }
        Estimator::Co => {
            let mu = fit_outcome_models(s, &learner, derive_named(seed, "outcome"))?;
            converged &= mu.converged;
            conditional_outcome(&mu.mu1_target, &mu.mu0_target)?
        }
        Estimator::Aipsw => {
            let dr = estimate_density_ratio(s, &learner, derive_named(seed, "membership"))?;
            let mu = fit_outcome_models(s, &learner, derive_named(seed, "outcome"))?;
            converged &= dr.converged && mu.converged;
            ratio_diagnostics(&mut diagnostics, &dr.ratios);
            aipsw(&trial, &dr.ratios, &mu, spec.propensity)?
        }
        Estimator::Cw => {
            let (g, k) = calibration_moments(&trial.covariates, spec.moments)?;
            let (gt, _) = calibration_moments(&target.covariates, spec.moments)?;
            let m = target.len() as f64;
            let g_tilde: Vec<f64> = (0..k)
                .map(|j| (0..target.len()).map(|i| gt[i * k + j]).sum::<f64>() / m)
                .collect();
            let w = calibration_weights(&g, k, &g_tilde)?;
            diagnostics.insert("cw_max_weight".into(), w.iter().cloned().fold(0.0, f64::max));
            cw_estimate(&trial, &w, spec.propensity)?
        }
    };
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "{} produced a non-finite estimate",
            spec.label()
        )));
    }
    Ok(PointEstimate {
        value,
        converged,
        diagnostics,
    })
}

fn ratio_diagnostics(d: &mut BTreeMap<String, f64>, ratios: &[f64]) {
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    d.insert("ratio_max".into(), max);
    d.insert("ratio_mean".into(), mean);
}

fn spec_diagnostics(spec: &MethodSpec, d: &mut BTreeMap<String, f64>, p: usize) {
    match spec.learner() {
        Learner::Forest(fp) => {
            d.insert("forest_trees".into(), fp.num_trees as f64);
            d.insert("forest_min_leaf".into(), fp.min_leaf as f64);
            d.insert("forest_mtry".into(), fp.resolved_mtry(p) as f64);
            d.insert("forest_subsample".into(), fp.subsample);
        }
        Learner::EmGlm { draws } => {
            d.insert("em_draws".into(), draws as f64);
        }
        Learner::Glm => {}
    }
    if spec.handler.imputation_strategy().is_some() {
        d.insert("mice_imputations".into(), spec.mice.imputations as f64);
        d.insert("mice_iterations".into(), spec.mice.iterations as f64);
    }
}

fn base_report(s: &StackedSample, spec: &MethodSpec) -> EstimateReport {
    let mut report = EstimateReport {
        estimate: f64::NAN,
        variance: None,
        ci_low: None,
        ci_high: None,
        method: spec.estimator.as_str().into(),
        missing_handler: spec.handler.as_str().into(),
        engine: spec.engine.as_str().into(),
        n_trial: s.n_trial(),
        n_target: s.n_target(),
        status: EstimateStatus::Ok,
        diagnostics: BTreeMap::new(),
        notes: Vec::new(),
    };
    spec_diagnostics(spec, &mut report.diagnostics, s.covariates.ncols());
    report
}

/// Prepares the data for the handler and runs the estimator.
pub fn estimate(s: &StackedSample, spec: &MethodSpec, seed: u64) -> Result<EstimateReport> {
    spec.validate()?;
    if spec.handler.imputation_strategy().is_some() {
        let completed = impute_for(s, spec, seed)?;
        return estimate_imputed(s, &completed, spec, seed);
    }
    let mut report = base_report(s, spec);
    let data = match spec.handler {
        Handler::None => {
            s.require_complete()?;
            s.clone()
        }
        Handler::Cc => complete_cases(s)?,
        _ => s.clone(),
    };
    report.n_trial = data.n_trial();
    report.n_target = data.n_target();
    let pe = point_estimate(&data, spec, seed)?;
    report.estimate = pe.value;
    report.diagnostics.extend(pe.diagnostics);
    if !pe.converged {
        report.status = EstimateStatus::NotConverged;
        report.notes.push("an iterative nuisance fit did not converge".into());
    }
    if spec.estimator == Estimator::Dm {
        let (trial, _) = data.split();
        let v = weighting::diff_in_means_variance(&trial)?;
        let h = normal_quantile(0.975) * v.sqrt();
        report.set_interval(v, pe.value - h, pe.value + h);
    }
    Ok(report)
}

/// Completed datasets for a multiple-imputation handler.
///
/// Depends only on the data, the handler, the MICE settings and `seed`, so
/// methods sharing these can share the result.
pub fn impute_for(s: &StackedSample, spec: &MethodSpec, seed: u64) -> Result<Vec<StackedSample>> {
    let strategy = spec
        .handler
        .imputation_strategy()
        .ok_or_else(|| Error::Spec(format!("handler `{}` does not impute", spec.handler)))?;
    multi_impute(s, strategy, spec.mice, derive_named(seed, "impute"))
}

/// Runs the estimator on every completed dataset and pools with Rubin's rules.
pub fn estimate_imputed(
    original: &StackedSample,
    completed: &[StackedSample],
    spec: &MethodSpec,
    seed: u64,
) -> Result<EstimateReport> {
    spec.validate()?;
    let mut report = base_report(original, spec);
    let est_seed = derive_named(seed, "analysis");
    let per_set: Vec<Result<(PointEstimate, Option<f64>)>> = par::map_indexed(completed.len(), |k| {
        let c = &completed[k];
        let pe = point_estimate(c, spec, derive(est_seed, k as u64))?;
        let var = within_variance(c, spec, derive(est_seed, k as u64))?;
        Ok((pe, var))
    });
    let mut estimates = Vec::with_capacity(per_set.len());
    let mut variances = Vec::with_capacity(per_set.len());
    let mut all_converged = true;
    for r in per_set {
        let (pe, v) = r?;
        all_converged &= pe.converged;
        estimates.push(pe.value);
        if let Some(v) = v {
            variances.push(v);
        }
    }
    let have_var = variances.len() == estimates.len();
    let pooled = rubin_pool(&estimates, have_var.then_some(variances.as_slice()))?;
    report.estimate = pooled.estimate;
    report.diagnostics.insert("mi_between_variance".into(), pooled.between);
    report
        .diagnostics
        .insert("mi_completed_datasets".into(), estimates.len() as f64);
    if let (Some(t), Some(lo), Some(hi)) = (pooled.total, pooled.ci_low, pooled.ci_high) {
        if let Some(w) = pooled.within {
            report.diagnostics.insert("mi_within_variance".into(), w);
        }
        if let Some(df) = pooled.df.filter(|d| d.is_finite()) {
            report.diagnostics.insert("mi_df".into(), df);
        }
        report.set_interval(t, lo, hi);
    }
    if !all_converged {
        report.status = EstimateStatus::NotConverged;
        report
            .notes
            .push("a nuisance fit on a completed dataset did not converge".into());
    }
    Ok(report)
}

/// Within-imputation variance: closed form for DM, small bootstrap otherwise.
fn within_variance(c: &StackedSample, spec: &MethodSpec, seed: u64) -> Result<Option<f64>> {
    if spec.estimator == Estimator::Dm {
        let (trial, _) = c.split();
        return weighting::diff_in_means_variance(&trial).map(Some);
    }
    if spec.pooling_bootstrap < 2 {
        return Ok(None);
    }
    let summary = bootstrap::bootstrap_values(c, spec.pooling_bootstrap, derive_named(seed, "within"), |sample, s| {
        point_estimate(sample, spec, s).map(|p| (p.value, p.converged))
    })?;
    Ok(Some(summary.variance))
}

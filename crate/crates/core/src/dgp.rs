//! Synthetic trial/target generation for the standard and CIS regimes.
//!
//! Standard regime: draw a covariate pool, select trial rows with the
//! selection model on complete covariates, assign treatment by a fair coin,
//! draw outcomes, draw an independent target sample, and only then hide
//! covariates. CIS regime: hide covariates in the pool first and let the
//! selection model see observed values and the response pattern.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::amputation::{ampute, AmputationSpec};
use crate::data::{stack, MaskedMatrix, StackedSample, TargetSample, TrialSample};
use crate::error::{Error, Result};
use crate::rng::{derive_named, stream};
use crate::stats::expit;

/// Treatment-effect slope on the effect modifier.
pub const EFFECT_SLOPE: f64 = 27.4;
const PROGNOSTIC_SLOPE: f64 = 13.7;
const PILOT_SIZE: usize = 200_000;
const PILOT_SEED: u64 = 0x9111_07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionModel {
    StdLinear,
    StdNonlinear,
    CisLinear,
    CisNonlinear,
}

impl SelectionModel {
    pub fn is_cis(self) -> bool {
        matches!(self, SelectionModel::CisLinear | SelectionModel::CisNonlinear)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionModel::StdLinear => "std-linear",
            SelectionModel::StdNonlinear => "std-nonlinear",
            SelectionModel::CisLinear => "cis-linear",
            SelectionModel::CisNonlinear => "cis-nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeModel {
    Linear,
    Nonlinear,
}

impl OutcomeModel {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeModel::Linear => "linear",
            OutcomeModel::Nonlinear => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    Standard,
    Cis,
}

impl Assumption {
    pub fn as_str(self) -> &'static str {
        match self {
            Assumption::Standard => "standard",
            Assumption::Cis => "cis",
        }
    }
}

/// How covariates get hidden in one simulated data set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Missingness {
    #[default]
    None,
    /// One mechanism applied to the stacked data (standard regime) or to
    /// the pool and the target separately (CIS regime).
    Shared { spec: AmputationSpec },
    /// Distinct specifications per source.
    PerSource {
        trial: AmputationSpec,
        target: AmputationSpec,
    },
}

/// One data-generating scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Requested expected trial size `n`.
    pub trial_size: usize,
    /// Pool size `N`; `None` solves `E[trial size] = n` by a pilot draw.
    pub pool_size: Option<usize>,
    pub target_size: usize,
    pub covariate_dim: usize,
    pub covariate_mean: f64,
    pub correlation: f64,
    pub selection_model: SelectionModel,
    pub outcome_model: OutcomeModel,
    pub assumption: Assumption,
    pub missingness: Missingness,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn linear(trial_size: usize, target_size: usize, assumption: Assumption) -> Self {
        Self {
            trial_size,
            pool_size: None,
            target_size,
            covariate_dim: 4,
            covariate_mean: 1.0,
            correlation: 0.6,
            selection_model: match assumption {
                Assumption::Standard => SelectionModel::StdLinear,
                Assumption::Cis => SelectionModel::CisLinear,
            },
            outcome_model: OutcomeModel::Linear,
            assumption,
            missingness: Missingness::None,
            seed: 0,
        }
    }

    pub fn nonlinear(trial_size: usize, target_size: usize, assumption: Assumption) -> Self {
        Self {
            selection_model: match assumption {
                Assumption::Standard => SelectionModel::StdNonlinear,
                Assumption::Cis => SelectionModel::CisNonlinear,
            },
            outcome_model: OutcomeModel::Nonlinear,
            ..Self::linear(trial_size, target_size, assumption)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.selection_model.is_cis() != (self.assumption == Assumption::Cis) {
            return Err(Error::Config(format!(
                "selection model `{}` is incompatible with the `{}` assumption",
                self.selection_model.as_str(),
                self.assumption.as_str()
            )));
        }
        if self.covariate_dim != 4 {
            return Err(Error::Config(format!(
                "the selection and outcome models are defined on 4 covariates, got {}",
                self.covariate_dim
            )));
        }
        if self.trial_size == 0 || self.target_size == 0 {
            return Err(Error::Config("trial and target sizes must be positive".into()));
        }
        let p = self.covariate_dim as f64;
        if !(self.correlation > -1.0 / (p - 1.0) && self.correlation < 1.0) {
            return Err(Error::Config(format!(
                "correlation {} does not give a positive-definite covariance",
                self.correlation
            )));
        }
        match &self.missingness {
            Missingness::None => {}
            Missingness::Shared { spec } => spec.validate(self.covariate_dim)?,
            Missingness::PerSource { trial, target } => {
                trial.validate(self.covariate_dim)?;
                target.validate(self.covariate_dim)?;
            }
        }
        Ok(())
    }

    fn trial_spec(&self) -> Option<&AmputationSpec> {
        match &self.missingness {
            Missingness::None => None,
            Missingness::Shared { spec } => Some(spec),
            Missingness::PerSource { trial, .. } => Some(trial),
        }
    }

    fn target_spec(&self) -> Option<&AmputationSpec> {
        match &self.missingness {
            Missingness::None => None,
            Missingness::Shared { spec } => Some(spec),
            Missingness::PerSource { target, .. } => Some(target),
        }
    }

    /// Population ATE of the outcome model.
    pub fn ground_truth(&self) -> f64 {
        ground_truth(self.outcome_model, self.covariate_mean)
    }

    /// Mean selection probability in the pool, from a fixed pilot draw.
    pub fn pilot_selection_rate(&self) -> Result<f64> {
        let mut rng = stream(PILOT_SEED);
        let x = draw_covariates(PILOT_SIZE, self, &mut rng)?;
        let x = match (self.assumption, self.trial_spec()) {
            (Assumption::Cis, Some(spec)) => ampute(&x, spec, &mut rng)?,
            _ => x,
        };
        let mut total = 0.0;
        for i in 0..x.nrows() {
            total += selection_probability(x.row_raw(i), x.row_mask(i), self.selection_model, self.covariate_mean)?;
        }
        Ok(total / x.nrows() as f64)
    }

    /// Pool size giving `E[trial size] = trial_size`.
    pub fn resolved_pool_size(&self) -> Result<usize> {
        match self.pool_size {
            Some(n) => Ok(n),
            None => {
                let rate = self.pilot_selection_rate()?;
                Ok((self.trial_size as f64 / rate).ceil() as usize)
            }
        }
    }
}

/// Population mean used for the `\bar X_j` factors of the non-linear models.
///
/// The overline is read as the population mean of the column; swap this
/// function to try other readings.
#[inline]
pub fn overline(covariate_mean: f64) -> f64 {
    covariate_mean
}

/// `|x1| sin(x1)`, the non-linear effect modifier.
#[inline]
fn wave(x1: f64) -> f64 {
    x1.abs() * x1.sin()
}

/// Draws `n` rows i.i.d. from `N(mean·1, Σ)` with unit variances and
/// common correlation.
pub fn draw_covariates<R: Rng + ?Sized>(n: usize, cfg: &SimulationConfig, rng: &mut R) -> Result<MaskedMatrix> {
    let p = cfg.covariate_dim;
    if n == 0 {
        return Err(Error::Config("cannot draw zero covariate rows".into()));
    }
    let sigma = nalgebra::DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { cfg.correlation });
    let chol = nalgebra::Cholesky::new(sigma)
        .ok_or_else(|| Error::Config("covariance matrix is not positive definite".into()))?;
    let l = chol.l();
    let mut values = Vec::with_capacity(n * p);
    let mut z = vec![0.0; p];
    for _ in 0..n {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(rng);
        }
        for i in 0..p {
            let mut v = cfg.covariate_mean;
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                v += l[(i, k)] * zk;
            }
            values.push(v);
        }
    }
    MaskedMatrix::complete(n, p, values, MaskedMatrix::default_names(p))
}

/// Trial-selection probability for one row.
///
/// Standard models need a fully observed row; CIS models multiply every
/// term by its response indicator, so hidden entries contribute nothing.
pub fn selection_probability(row: &[f64], mask: &[bool], model: SelectionModel, covariate_mean: f64) -> Result<f64> {
    if row.len() < 4 || mask.len() != row.len() {
        return Err(Error::Contract("selection models need 4 covariates".into()));
    }
    let bar = overline(covariate_mean);
    let lp = if model.is_cis() {
        let v = |j: usize| if mask[j] { row[j] } else { 0.0 };
        let r = |j: usize| if mask[j] { 1.0 } else { 0.0 };
        match model {
            SelectionModel::CisLinear => -2.5 - 0.5 * v(0) - 0.3 * v(1) - 0.5 * v(2) - 0.4 * v(3),
            _ => {
                // X1 enters the X3 interaction; it only counts when both are seen.
                let w1 = if mask[0] { wave(row[0]) } else { 0.0 };
                -2.1 - 0.5 * (w1 + 1.5) * r(0)
                    - 0.3 * v(1).abs() * bar * r(1)
                    - 0.75 * v(2)
                    - 0.5 * v(2) * w1
                    - 0.4 * v(3).abs() * bar * r(3)
            }
        }
    } else {
        if mask.iter().take(4).any(|&b| !b) {
            return Err(Error::Contract(
                "standard selection models need a fully observed row".into(),
            ));
        }
        let x = row;
        match model {
            SelectionModel::StdLinear => -3.1 - 0.5 * x[0] - 0.3 * x[1] - 0.5 * x[2] - 0.4 * x[3],
            _ => {
                -2.95
                    - 0.5 * wave(x[0])
                    - 0.3 * x[1].abs() * bar
                    - 0.75 * x[2]
                    - 0.5 * x[2] * wave(x[0])
                    - 0.4 * x[3].abs() * bar
            }
        }
    };
    Ok(expit(lp))
}

/// Noise-free potential outcome `E[Y(a) | x]`.
pub fn outcome_mean(row: &[f64], a: bool, model: OutcomeModel, covariate_mean: f64) -> f64 {
    let a = if a { 1.0 } else { 0.0 };
    let x = row;
    match model {
        OutcomeModel::Linear => -100.0 + EFFECT_SLOPE * a * x[0] + PROGNOSTIC_SLOPE * (x[1] + x[2] + x[3]),
        OutcomeModel::Nonlinear => {
            let bar = overline(covariate_mean);
            -100.0
                + EFFECT_SLOPE * a * (wave(x[0]) + 1.5)
                + PROGNOSTIC_SLOPE * x[1].abs() * bar
                + 20.55 * x[2]
                + PROGNOSTIC_SLOPE * x[2] * wave(x[0])
                + PROGNOSTIC_SLOPE * x[3].abs() * bar
        }
    }
}

/// Outcome draw: model mean plus standard normal noise.
pub fn draw_outcome<R: Rng + ?Sized>(
    row: &[f64],
    a: bool,
    model: OutcomeModel,
    covariate_mean: f64,
    rng: &mut R,
) -> f64 {
    let eps: f64 = StandardNormal.sample(rng);
    outcome_mean(row, a, model, covariate_mean) + eps
}

/// Population average treatment effect with `X1 ~ N(mean, 1)`.
pub fn ground_truth(model: OutcomeModel, covariate_mean: f64) -> f64 {
    match model {
        OutcomeModel::Linear => EFFECT_SLOPE * covariate_mean,
        OutcomeModel::Nonlinear => EFFECT_SLOPE * (gaussian_expectation(wave, covariate_mean) + 1.5),
    }
}

/// `E[f(Z)]` for `Z ~ N(mean, 1)` by composite Simpson on ±12 sd.
fn gaussian_expectation(f: impl Fn(f64) -> f64, mean: f64) -> f64 {
    let steps = 40_000;
    let (a, b) = (mean - 12.0, mean + 12.0);
    let h = (b - a) / steps as f64;
    let density = |x: f64| (-(x - mean) * (x - mean) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |x: f64| f(x) * density(x);
    let mut s = g(a) + g(b);
    for k in 1..steps {
        let x = a + k as f64 * h;
        s += if k % 2 == 1 { 4.0 * g(x) } else { 2.0 * g(x) };
    }
    s * h / 3.0
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Observed (possibly incomplete) samples.
    pub trial: TrialSample,
    pub target: TargetSample,
    /// The same rows before any entry was hidden.
    pub full_trial: TrialSample,
    pub full_target: TargetSample,
    pub ground_truth: f64,
    pub pool_size: usize,
}

impl SimulatedData {
    pub fn stacked(&self) -> Result<StackedSample> {
        stack(&self.trial, &self.target)
    }

    pub fn stacked_full(&self) -> Result<StackedSample> {
        stack(&self.full_trial, &self.full_target)
    }
}

/// Generates one data set; fully determined by `cfg` (including its seed)
/// and `pool_size`.
pub fn simulate_with_pool(cfg: &SimulationConfig, pool_size: usize) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng_pool = stream(derive_named(cfg.seed, "pool"));
    let mut rng_select = stream(derive_named(cfg.seed, "select"));
    let mut rng_treat = stream(derive_named(cfg.seed, "treatment"));
    let mut rng_outcome = stream(derive_named(cfg.seed, "outcome"));
    let mut rng_target = stream(derive_named(cfg.seed, "target"));
    let mut rng_ampute = stream(derive_named(cfg.seed, "ampute"));

    let pool = draw_covariates(pool_size, cfg, &mut rng_pool)?;
    let pool_seen = match (cfg.assumption, cfg.trial_spec()) {
        (Assumption::Cis, Some(spec)) => ampute(&pool, spec, &mut rng_ampute)?,
        _ => pool.clone(),
    };

    let mut selected = Vec::new();
    for i in 0..pool_size {
        let p = selection_probability(
            pool_seen.row_raw(i),
            pool_seen.row_mask(i),
            cfg.selection_model,
            cfg.covariate_mean,
        )?;
        if rng_select.random::<f64>() < p {
            selected.push(i);
        }
    }
    if selected.is_empty() {
        return Err(Error::DegenerateSample(format!(
            "no pool row was selected into the trial out of {pool_size}; raise the pool size"
        )));
    }
    let n = selected.len();
    let treatment: Vec<bool> = (0..n).map(|_| rng_treat.random::<f64>() < 0.5).collect();
    let full_cov = pool.select_rows(&selected);
    let outcome: Vec<f64> = (0..n)
        .map(|i| {
            draw_outcome(
                full_cov.row_raw(i),
                treatment[i],
                cfg.outcome_model,
                cfg.covariate_mean,
                &mut rng_outcome,
            )
        })
        .collect();
    let full_trial = TrialSample::new(full_cov, treatment.clone(), outcome.clone())?;
    let full_target = TargetSample::new(draw_covariates(cfg.target_size, cfg, &mut rng_target)?);

    let (trial_cov, target_cov) = match cfg.assumption {
        Assumption::Cis => {
            let trial_cov = pool_seen.select_rows(&selected);
            let target_cov = match cfg.target_spec() {
                Some(spec) => ampute(&full_target.covariates, spec, &mut rng_ampute)?,
                None => full_target.covariates.clone(),
            };
            (trial_cov, target_cov)
        }
        Assumption::Standard => match &cfg.missingness {
            Missingness::None => (full_trial.covariates.clone(), full_target.covariates.clone()),
            Missingness::Shared { spec } => {
                let both = full_trial.covariates.vstack(&full_target.covariates)?;
                let hidden = ampute(&both, spec, &mut rng_ampute)?;
                let t: Vec<usize> = (0..n).collect();
                let o: Vec<usize> = (n..hidden.nrows()).collect();
                (hidden.select_rows(&t), hidden.select_rows(&o))
            }
            Missingness::PerSource { trial, target } => (
                ampute(&full_trial.covariates, trial, &mut rng_ampute)?,
                ampute(&full_target.covariates, target, &mut rng_ampute)?,
            ),
        },
    };

    Ok(SimulatedData {
        trial: TrialSample::new(trial_cov, treatment, outcome)?,
        target: TargetSample::new(target_cov),
        full_trial,
        full_target,
        ground_truth: cfg.ground_truth(),
        pool_size,
    })
}

/// Generates one data set, solving for the pool size if needed.
pub fn simulate(cfg: &SimulationConfig) -> Result<SimulatedData> {
    let pool = cfg.resolved_pool_size()?;
    simulate_with_pool(cfg, pool)
}

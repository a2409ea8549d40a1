//! Samples, response masks and the report type shared by every stage.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Value physically stored under a masked entry. Never read.
pub const MASKED_SENTINEL: f64 = f64::NAN;

/// Row-major covariate matrix with an explicit response mask.
///
/// `mask[i * p + j] == true` means the entry is observed. Masked entries hold
/// [`MASKED_SENTINEL`]; every consumer goes through the mask, so overwriting
/// them with any other value must not change any downstream result.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    names: Vec<String>,
}

/// Equality ignores whatever is stored under masked entries.
impl PartialEq for MaskedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.names == other.names
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &seen)| !seen || a == b)
    }
}

impl MaskedMatrix {
    pub fn new(nrows: usize, ncols: usize, mut values: Vec<f64>, mask: Vec<bool>, names: Vec<String>) -> Result<Self> {
        if values.len() != nrows * ncols || mask.len() != nrows * ncols {
            return Err(Error::Schema(format!(
                "expected {} entries for a {nrows}x{ncols} matrix, got {} values and {} mask flags",
                nrows * ncols,
                values.len(),
                mask.len()
            )));
        }
        if names.len() != ncols {
            return Err(Error::Schema(format!(
                "{} column names for {ncols} columns",
                names.len()
            )));
        }
        for (k, (v, &obs)) in values.iter_mut().zip(&mask).enumerate() {
            if obs {
                if !v.is_finite() {
                    return Err(Error::Schema(format!(
                        "non-finite observed value at row {}, column `{}`",
                        k / ncols,
                        names[k % ncols]
                    )));
                }
            } else {
                *v = MASKED_SENTINEL;
            }
        }
        Ok(Self {
            nrows,
            ncols,
            values,
            mask,
            names,
        })
    }

    /// Fully observed matrix.
    pub fn complete(nrows: usize, ncols: usize, values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        Self::new(nrows, ncols, values, vec![true; nrows * ncols], names)
    }

    /// Default names `X1..Xp`.
    pub fn default_names(p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("X{j}")).collect()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.ncols + j]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.ncols + j;
        if self.mask[k] {
            Some(self.values[k])
        } else {
            None
        }
    }

    /// Raw row storage; entries whose mask flag is false are meaningless.
    #[inline]
    pub fn row_raw(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.ncols..(i + 1) * self.ncols]
    }

    /// Row values, panicking on a masked entry. Use only on complete data.
    pub fn row_complete(&self, i: usize) -> &[f64] {
        debug_assert!(self.row_is_complete(i));
        self.row_raw(i)
    }

    pub fn row_is_complete(&self, i: usize) -> bool {
        self.row_mask(i).iter().all(|&b| b)
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&b| !b).count()
    }

    pub fn observed_in_column(&self, j: usize) -> usize {
        (0..self.nrows).filter(|&i| self.is_observed(i, j)).count()
    }

    /// Observed values of column `j`, in row order.
    pub fn observed_column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).filter_map(|i| self.get(i, j)).collect()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let p = self.ncols;
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut mask = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            values.extend_from_slice(self.row_raw(i));
            mask.extend_from_slice(self.row_mask(i));
        }
        Self {
            nrows: rows.len(),
            ncols: p,
            values,
            mask,
            names: self.names.clone(),
        }
    }

    /// Vertical concatenation; column names must agree.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.names != other.names {
            return Err(Error::Schema(format!(
                "column names differ: {:?} vs {:?}",
                self.names, other.names
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let mut mask = self.mask.clone();
        mask.extend_from_slice(&other.mask);
        Ok(Self {
            nrows: self.nrows + other.nrows,
            ncols: self.ncols,
            values,
            mask,
            names: self.names.clone(),
        })
    }

    /// Masks additional entries; `extra[k] == true` hides entry `k`.
    pub fn with_extra_mask(&self, extra: &[bool]) -> Self {
        let mut out = self.clone();
        for (k, &hide) in extra.iter().enumerate() {
            if hide {
                out.mask[k] = false;
                out.values[k] = MASKED_SENTINEL;
            }
        }
        out
    }

    /// Overwrites every masked entry with `fill(i, j)`.
    ///
    /// Exists so callers can check that nothing downstream reads masked
    /// storage; the result compares unequal to `self` only in hidden cells.
    pub fn overwrite_masked(&self, mut fill: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                let k = i * self.ncols + j;
                if !out.mask[k] {
                    out.values[k] = fill(i, j);
                }
            }
        }
        out
    }

    /// Observed values with every masked cell replaced by `imputed(i, j)`.
    pub fn fill_missing(&self, mut imputed: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                let k = i * self.ncols + j;
                if !out.mask[k] {
                    out.values[k] = imputed(i, j);
                    out.mask[k] = true;
                }
            }
        }
        out
    }
}

/// Randomized trial rows: covariates, binary treatment, outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSample {
    pub covariates: MaskedMatrix,
    pub treatment: Vec<bool>,
    pub outcome: Vec<f64>,
}

impl TrialSample {
    pub fn new(covariates: MaskedMatrix, treatment: Vec<bool>, outcome: Vec<f64>) -> Result<Self> {
        let n = covariates.nrows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Schema(format!(
                "trial has {n} covariate rows but {} treatments and {} outcomes",
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::Schema(format!("outcome at row {i} is not finite")));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
        })
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.treatment.iter().filter(|&&a| a).count();
        (self.len() - n1, n1)
    }

    pub fn require_both_arms(&self) -> Result<()> {
        let (n0, n1) = self.arm_sizes();
        if n0 == 0 || n1 == 0 {
            return Err(Error::DegenerateSample(format!(
                "trial arms must both be non-empty (control {n0}, treated {n1})"
            )));
        }
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            covariates: self.covariates.select_rows(rows),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }
}

/// Target-population covariates only.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub covariates: MaskedMatrix,
}

impl TargetSample {
    pub fn new(covariates: MaskedMatrix) -> Self {
        Self { covariates }
    }

    pub fn len(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trial rows followed by target rows in one covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSample {
    pub covariates: MaskedMatrix,
    n_trial: usize,
    pub treatment: Vec<bool>,
    pub outcome: Vec<f64>,
}

impl StackedSample {
    pub fn n_trial(&self) -> usize {
        self.n_trial
    }

    pub fn n_target(&self) -> usize {
        self.covariates.nrows() - self.n_trial
    }

    pub fn len(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True for trial rows.
    pub fn source(&self) -> Vec<bool> {
        (0..self.len()).map(|i| i < self.n_trial).collect()
    }

    pub fn trial_rows(&self) -> std::ops::Range<usize> {
        0..self.n_trial
    }

    pub fn target_rows(&self) -> std::ops::Range<usize> {
        self.n_trial..self.len()
    }

    /// Splits back into the two sources.
    pub fn split(&self) -> (TrialSample, TargetSample) {
        let trial_idx: Vec<usize> = self.trial_rows().collect();
        let target_idx: Vec<usize> = self.target_rows().collect();
        (
            TrialSample {
                covariates: self.covariates.select_rows(&trial_idx),
                treatment: self.treatment.clone(),
                outcome: self.outcome.clone(),
            },
            TargetSample {
                covariates: self.covariates.select_rows(&target_idx),
            },
        )
    }

    /// Same rows and outcomes, replacement covariates (e.g. an imputed copy).
    pub fn with_covariates(&self, covariates: MaskedMatrix) -> Result<Self> {
        if covariates.nrows() != self.len() {
            return Err(Error::Schema(format!(
                "replacement covariates have {} rows, sample has {}",
                covariates.nrows(),
                self.len()
            )));
        }
        Ok(Self {
            covariates,
            n_trial: self.n_trial,
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
        })
    }

    /// Resample-style row selection; `trial_rows` index the trial block and
    /// `target_rows` the target block (both zero-based within their block).
    pub fn select(&self, trial_rows: &[usize], target_rows: &[usize]) -> Self {
        let mut rows: Vec<usize> = trial_rows.to_vec();
        rows.extend(target_rows.iter().map(|&i| i + self.n_trial));
        Self {
            covariates: self.covariates.select_rows(&rows),
            n_trial: trial_rows.len(),
            treatment: trial_rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: trial_rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    pub fn require_complete(&self) -> Result<()> {
        if !self.covariates.is_complete() {
            return Err(Error::Contract(format!(
                "{} covariate entries are missing; choose a missing-value handler",
                self.covariates.missing_count()
            )));
        }
        Ok(())
    }
}

/// Stacks trial rows above target rows.
pub fn stack(trial: &TrialSample, target: &TargetSample) -> Result<StackedSample> {
    if trial.covariates.names() != target.covariates.names() {
        return Err(Error::Schema(format!(
            "trial columns {:?} do not match target columns {:?}",
            trial.covariates.names(),
            target.covariates.names()
        )));
    }
    Ok(StackedSample {
        covariates: trial.covariates.vstack(&target.covariates)?,
        n_trial: trial.len(),
        treatment: trial.treatment.clone(),
        outcome: trial.outcome.clone(),
    })
}

/// Drops every row with at least one missing covariate.
pub fn complete_cases(s: &StackedSample) -> Result<StackedSample> {
    let keep_trial: Vec<usize> = s.trial_rows().filter(|&i| s.covariates.row_is_complete(i)).collect();
    let keep_target: Vec<usize> = s
        .target_rows()
        .filter(|&i| s.covariates.row_is_complete(i))
        .map(|i| i - s.n_trial)
        .collect();
    let out = s.select(&keep_trial, &keep_target);
    let n1 = out.treatment.iter().filter(|&&a| a).count();
    let n0 = out.n_trial - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateSample(format!(
            "no complete trial rows left in an arm after complete-case filtering (control {n0}, treated {n1})"
        )));
    }
    if out.n_target() == 0 {
        return Err(Error::DegenerateSample(
            "no complete target rows left after complete-case filtering".into(),
        ));
    }
    Ok(out)
}

/// Whether the report's point estimate can be trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateStatus {
    Ok,
    /// An iterative nuisance fit (EM) hit its iteration cap.
    NotConverged,
}

/// Point estimate with optional uncertainty and fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub variance: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub method: String,
    pub missing_handler: String,
    pub engine: String,
    pub n_trial: usize,
    pub n_target: usize,
    pub status: EstimateStatus,
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl EstimateReport {
    pub fn converged(&self) -> bool {
        self.status == EstimateStatus::Ok
    }

    /// Attaches variance and interval, keeping `ci_low <= estimate <= ci_high`.
    pub fn set_interval(&mut self, variance: f64, low: f64, high: f64) {
        self.variance = Some(variance.max(0.0));
        self.ci_low = Some(low.min(self.estimate));
        self.ci_high = Some(high.max(self.estimate));
        if low > self.estimate || high < self.estimate {
            self.notes
                .push("interval did not cover the point estimate and was extended to it".into());
        }
    }
}

//! Introduces missing covariate values under MCAR, MAR and MNAR mechanisms.
//!
//! * MCAR: each targeted entry is hidden independently with probability
//!   `proportion`.
//! * MAR: every row is assigned one candidate column among `columns`
//!   uniformly at random; the candidate is hidden with probability
//!   `expit(alpha_j + slopes · z)` where `z` are the standardized driver
//!   values of that row. Drivers are never hidden in the same row, so the
//!   probability depends on observed values only. `alpha_j` is found by
//!   bisection so that the expected per-column proportion equals
//!   `proportion`.
//! * MNAR: self-masking upper-quantile censorship. Entries at or above the
//!   column's `(1 - 2·proportion)` quantile are hidden with probability 1/2.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::stats::{expit, quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            other => Err(Error::Parse(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// What to hide and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmputationSpec {
    pub mechanism: Mechanism,
    /// Targeted column indices; `None` means every column.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
    pub proportion: f64,
    /// MAR drivers; `None` means every other column.
    #[serde(default)]
    pub mar_driver_columns: Option<Vec<usize>>,
    /// MAR slopes, one per column of the matrix (unused entries ignored).
    /// Defaults to 1 for every driver.
    #[serde(default)]
    pub mar_slopes: Option<Vec<f64>>,
}

impl AmputationSpec {
    pub fn new(mechanism: Mechanism, proportion: f64) -> Self {
        Self {
            mechanism,
            columns: None,
            proportion,
            mar_driver_columns: None,
            mar_slopes: None,
        }
    }

    pub fn with_proportion(&self, proportion: f64) -> Self {
        Self {
            proportion,
            ..self.clone()
        }
    }

    fn target_columns(&self, p: usize) -> Result<Vec<usize>> {
        let cols = self.columns.clone().unwrap_or_else(|| (0..p).collect());
        if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
            return Err(Error::Spec(format!("column index {bad} out of range for {p} columns")));
        }
        Ok(cols)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.proportion) {
            return Err(Error::UnsupportedProportion {
                proportion: self.proportion,
                reason: "must lie in [0, 1)".into(),
            });
        }
        let cols = self.target_columns(p)?;
        match self.mechanism {
            Mechanism::Mcar => {}
            Mechanism::Mnar => {
                if self.proportion >= 0.5 {
                    return Err(Error::UnsupportedProportion {
                        proportion: self.proportion,
                        reason: "upper-quantile censorship supports proportions below 0.5".into(),
                    });
                }
            }
            Mechanism::Mar => {
                if self.proportion * cols.len() as f64 >= 1.0 {
                    return Err(Error::UnsupportedProportion {
                        proportion: self.proportion,
                        reason: format!(
                            "MAR with one candidate column per row needs proportion x {} columns < 1",
                            cols.len()
                        ),
                    });
                }
                for &j in &cols {
                    if self.drivers_for(j, p).is_empty() {
                        return Err(Error::Spec(format!(
                            "MAR column {j} has no driver column distinct from itself"
                        )));
                    }
                }
                if let Some(d) = &self.mar_driver_columns {
                    if let Some(&bad) = d.iter().find(|&&c| c >= p) {
                        return Err(Error::Spec(format!("driver column {bad} out of range")));
                    }
                }
                if let Some(s) = &self.mar_slopes {
                    if s.len() != p {
                        return Err(Error::Spec(format!("{} MAR slopes given for {p} columns", s.len())));
                    }
                }
            }
        }
        Ok(())
    }

    fn drivers_for(&self, j: usize, p: usize) -> Vec<usize> {
        match &self.mar_driver_columns {
            Some(d) => d.iter().copied().filter(|&k| k != j).collect(),
            None => (0..p).filter(|&k| k != j).collect(),
        }
    }
}

/// Hides entries of `x` according to `spec`. Entries already missing stay
/// missing; targeted columns must be complete on input.
pub fn ampute<R: Rng + ?Sized>(x: &MaskedMatrix, spec: &AmputationSpec, rng: &mut R) -> Result<MaskedMatrix> {
    let (n, p) = (x.nrows(), x.ncols());
    spec.validate(p)?;
    let cols = spec.target_columns(p)?;
    for &j in &cols {
        if x.observed_in_column(j) != n {
            return Err(Error::Contract(format!(
                "column `{}` already has missing entries",
                x.names()[j]
            )));
        }
    }
    if spec.proportion == 0.0 || n == 0 || cols.is_empty() {
        return Ok(x.clone());
    }
    let mut hide = vec![false; n * p];
    match spec.mechanism {
        Mechanism::Mcar => {
            for i in 0..n {
                for &j in &cols {
                    hide[i * p + j] = rng.random::<f64>() < spec.proportion;
                }
            }
        }
        Mechanism::Mnar => {
            let level = 1.0 - 2.0 * spec.proportion;
            for &j in &cols {
                let column: Vec<f64> = (0..n).map(|i| x.row_raw(i)[j]).collect();
                let threshold = quantile(&column, level);
                for (i, &v) in column.iter().enumerate() {
                    if v >= threshold {
                        hide[i * p + j] = rng.random::<f64>() < 0.5;
                    }
                }
            }
        }
        Mechanism::Mar => mar_mask(x, spec, &cols, rng, &mut hide)?,
    }
    Ok(x.with_extra_mask(&hide))
}

fn mar_mask<R: Rng + ?Sized>(
    x: &MaskedMatrix,
    spec: &AmputationSpec,
    cols: &[usize],
    rng: &mut R,
    hide: &mut [bool],
) -> Result<()> {
    let (n, p) = (x.nrows(), x.ncols());
    // Standardize every column once; drivers are complete by contract only
    // when they are targeted, so fall back to observed moments.
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let obs = x.observed_column(j);
        if obs.len() >= 2 {
            let m = crate::stats::mean(&obs);
            let sd = crate::stats::sample_variance(&obs).sqrt();
            center[j] = m;
            scale[j] = if sd > 0.0 { sd } else { 1.0 };
        }
    }
    let slopes = spec.mar_slopes.clone().unwrap_or_else(|| vec![1.0; p]);
    let target = spec.proportion * cols.len() as f64;

    let assignment: Vec<usize> = (0..n).map(|_| cols[rng.random_range(0..cols.len())]).collect();
    let uniforms: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    for &j in cols {
        let drivers = spec.drivers_for(j, p);
        let rows: Vec<usize> = (0..n).filter(|&i| assignment[i] == j).collect();
        if rows.is_empty() {
            continue;
        }
        let mut scores = Vec::with_capacity(rows.len());
        for &i in &rows {
            let mut s = 0.0;
            for &k in &drivers {
                let v = x
                    .get(i, k)
                    .ok_or_else(|| Error::Spec(format!("MAR driver column {k} is unobserved in row {i}")))?;
                s += slopes[k] * (v - center[k]) / scale[k];
            }
            scores.push(s);
        }
        let alpha = calibrate_intercept(&scores, target);
        for (&i, &s) in rows.iter().zip(&scores) {
            hide[i * p + j] = uniforms[i] < expit(alpha + s);
        }
    }
    Ok(())
}

/// Intercept `a` with `mean(expit(a + s_i)) == target`, by bisection.
pub fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    let avg = |a: f64| scores.iter().map(|&s| expit(a + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if avg(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

//! Multivariate normal fit by EM under ignorable missingness.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, submatrix, symmetrize};

pub const LOGLIK_TOLERANCE: f64 = 1e-8;
pub const MAX_EM_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct MvnModel {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Observed-data log-likelihood at the start of each iteration and at
    /// the returned parameters.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

/// Gaussian conditional of the hidden coordinates given the observed ones.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub observed: Vec<usize>,
    pub hidden: Vec<usize>,
    /// `Σ_HO Σ_OO⁻¹`.
    pub gain: DMatrix<f64>,
    /// `L` with `L Lᵀ = Σ_HH − Σ_HO Σ_OO⁻¹ Σ_OH`.
    pub cov_factor: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl Conditional {
    /// Conditional mean of the hidden coordinates.
    pub fn mean(&self, model: &MvnModel, row: &[f64]) -> DVector<f64> {
        let dev = DVector::from_iterator(
            self.observed.len(),
            self.observed.iter().map(|&j| row[j] - model.mean[j]),
        );
        let shift = &self.gain * dev;
        DVector::from_iterator(
            self.hidden.len(),
            self.hidden.iter().enumerate().map(|(k, &j)| model.mean[j] + shift[k]),
        )
    }
}

impl MvnModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Conditional distribution for a response pattern (`true` = observed).
    pub fn conditional(&self, mask: &[bool]) -> Result<Conditional> {
        let observed: Vec<usize> = (0..self.dim()).filter(|&j| mask[j]).collect();
        let hidden: Vec<usize> = (0..self.dim()).filter(|&j| !mask[j]).collect();
        let s_hh = submatrix(&self.covariance, &hidden, &hidden);
        let (gain, mut cov) = if observed.is_empty() {
            (DMatrix::zeros(hidden.len(), 0), s_hh)
        } else {
            let s_oo = submatrix(&self.covariance, &observed, &observed);
            let s_ho = submatrix(&self.covariance, &hidden, &observed);
            let chol =
                cholesky(&s_oo).map_err(|_| Error::Numerical("covariance of observed block is singular".into()))?;
            // gain = Σ_HO Σ_OO⁻¹ = (Σ_OO⁻¹ Σ_OH)ᵀ
            let gain = chol.solve(&s_ho.transpose()).transpose();
            let cov = s_hh - &gain * s_ho.transpose();
            (gain, cov)
        };
        symmetrize(&mut cov);
        let cov_factor = if hidden.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            psd_factor(&cov)
        };
        Ok(Conditional {
            observed,
            hidden,
            gain,
            cov_factor,
            cov,
        })
    }

    /// Row with hidden coordinates replaced by their conditional means.
    pub fn complete_row(&self, row: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        let mut out = row[..self.dim()].to_vec();
        if mask.iter().all(|&b| b) {
            return Ok(out);
        }
        let cond = self.conditional(mask)?;
        let m = cond.mean(self, row);
        for (k, &j) in cond.hidden.iter().enumerate() {
            out[j] = m[k];
        }
        Ok(out)
    }
}

/// `L` with `L Lᵀ ≈ a` for a positive-semidefinite `a`; lower triangular when `a` is definite.
fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = nalgebra::Cholesky::new(a.clone()) {
        return c.l();
    }
    let eig = a.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut l = eig.eigenvectors.clone();
    for j in 0..l.ncols() {
        let s = d[j];
        l.column_mut(j).scale_mut(s);
    }
    l
}

struct PatternGroup {
    mask: Vec<bool>,
    rows: Vec<usize>,
}

fn group_patterns(x: &MaskedMatrix) -> Vec<PatternGroup> {
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..x.nrows() {
        groups.entry(x.row_mask(i).to_vec()).or_default().push(i);
    }
    // Fully observed pattern first keeps the accumulation order stable.
    let mut out: Vec<PatternGroup> = groups
        .into_iter()
        .map(|(mask, rows)| PatternGroup { mask, rows })
        .collect();
    out.sort_by_key(|g| std::cmp::Reverse(g.mask.iter().filter(|&&b| b).count()));
    out
}

pub fn fit_mvn_em(x: &MaskedMatrix) -> Result<MvnModel> {
    let n = x.nrows();
    let p = x.ncols();
    for j in 0..p {
        let seen = x.observed_in_column(j);
        if seen < 2 {
            return Err(Error::InsufficientObservations {
                column: x.names()[j].clone(),
                observed: seen,
                required: 2,
            });
        }
    }
    let groups = group_patterns(x);

    // Start from available-case means and variances with zero correlation.
    let mut mean = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    for j in 0..p {
        let col = x.observed_column(j);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
        mean[j] = m;
        cov[(j, j)] = v.max(1e-8);
    }
    let mut model = MvnModel {
        mean,
        covariance: cov,
        loglik_trace: Vec::new(),
        converged: false,
    };

    for _ in 0..MAX_EM_ITERATIONS {
        let (ll, next_mean, next_cov) = em_step(x, &groups, &model, n)?;
        let gain = model.loglik_trace.last().map(|prev| ll - prev);
        model.loglik_trace.push(ll);
        if let Some(g) = gain {
            if g < LOGLIK_TOLERANCE {
                model.converged = true;
                break;
            }
        }
        model.mean = next_mean;
        model.covariance = next_cov;
    }
    if !model.converged {
        let (ll, _, _) = em_step(x, &groups, &model, n)?;
        model.loglik_trace.push(ll);
    }
    Ok(model)
}

/// One EM pass: observed-data log-likelihood at the current parameters and
/// the updated parameters.
fn em_step(
    x: &MaskedMatrix,
    groups: &[PatternGroup],
    model: &MvnModel,
    n: usize,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let p = model.dim();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    let mut t1 = DVector::zeros(p);
    let mut t2 = DMatrix::zeros(p, p);
    let mut full = DVector::zeros(p);
    for g in groups {
        let cond = model.conditional(&g.mask)?;
        let o = &cond.observed;
        let (chol_oo, logdet) = if o.is_empty() {
            (None, 0.0)
        } else {
            let s_oo = submatrix(&model.covariance, o, o);
            let c = cholesky(&s_oo).map_err(|_| Error::Numerical("EM covariance became singular".into()))?;
            let logdet = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (Some(c), logdet)
        };
        for &i in &g.rows {
            let row = x.row_raw(i);
            if let Some(c) = &chol_oo {
                let dev = DVector::from_iterator(o.len(), o.iter().map(|&j| row[j] - model.mean[j]));
                let quad = dev.dot(&c.solve(&dev));
                ll -= 0.5 * (o.len() as f64 * ln2pi + logdet + quad);
            }
            for &j in o {
                full[j] = row[j];
            }
            if !cond.hidden.is_empty() {
                let m = cond.mean(model, row);
                for (k, &j) in cond.hidden.iter().enumerate() {
                    full[j] = m[k];
                }
            }
            t1 += &full;
            t2.ger(1.0, &full, &full, 1.0);
            for (a, &ja) in cond.hidden.iter().enumerate() {
                for (b, &jb) in cond.hidden.iter().enumerate() {
                    t2[(ja, jb)] += cond.cov[(a, b)];
                }
            }
        }
    }
    let nf = n as f64;
    let mean = t1 / nf;
    let mut cov = t2 / nf - &mean * mean.transpose();
    symmetrize(&mut cov);
    Ok((ll, mean, cov))
}

//! Regression on incomplete Gaussian covariates.
//!
//! Linear models come from the joint normal of `(x, y)`. Logistic models use
//! Monte-Carlo EM: every incomplete row gets `K` completions drawn once from
//! the Gaussian conditional of its hidden coordinates, and each E-step
//! reweights them by the current likelihood of the observed label.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, submatrix};
use crate::nuisance::glm::{fit_glm, fit_weighted_glm, Design, Family, GlmModel};
use crate::nuisance::mvn::{fit_mvn_em, Conditional, MvnModel};
use crate::rng::{derive_named, stream};
use crate::stats::expit;

pub const DEFAULT_MC_DRAWS: usize = 50;
pub const COEFFICIENT_TOLERANCE: f64 = 1e-4;
pub const STABLE_ITERATIONS: usize = 3;
pub const MAX_MCEM_ITERATIONS: usize = 100;

#[derive(Debug, Clone)]
pub struct EmGlmModel {
    pub glm: GlmModel,
    pub covariate_model: MvnModel,
    pub mc_draws: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `K × p` standard normals reused by every marginalizing prediction.
    normal_bank: Vec<f64>,
}

pub fn fit_em_glm(x: &MaskedMatrix, y: &[f64], family: Family, k: usize, seed: u64) -> Result<EmGlmModel> {
    if y.len() != x.nrows() {
        return Err(Error::Contract("one response per covariate row is required".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("responses must be observed".into()));
    }
    if k == 0 {
        return Err(Error::Config("the number of Monte-Carlo draws must be positive".into()));
    }
    let p = x.ncols();
    let mut bank_rng = stream(derive_named(seed, "prediction-bank"));
    let normal_bank: Vec<f64> = (0..k * p).map(|_| StandardNormal.sample(&mut bank_rng)).collect();
    match family {
        Family::Linear => fit_linear(x, y, k, normal_bank),
        Family::Logistic => fit_logistic(x, y, k, seed, normal_bank),
    }
}

fn fit_linear(x: &MaskedMatrix, y: &[f64], k: usize, normal_bank: Vec<f64>) -> Result<EmGlmModel> {
    let n = x.nrows();
    let p = x.ncols();
    if x.is_complete() {
        // The joint-normal fit reduces to least squares; skipping it keeps
        // noiseless responses from producing a singular joint covariance.
        let values: Vec<f64> = (0..n).flat_map(|i| x.row_raw(i).to_vec()).collect();
        let glm = fit_glm(Design::named(&values, p, x.names()), y, Family::Linear)?;
        let covariate_model = fit_mvn_em(x)?;
        return Ok(EmGlmModel {
            glm,
            converged: true,
            iterations: 0,
            covariate_model,
            mc_draws: k,
            normal_bank,
        });
    }
    let mut values = Vec::with_capacity(n * (p + 1));
    let mut mask = Vec::with_capacity(n * (p + 1));
    for i in 0..n {
        values.extend_from_slice(x.row_raw(i));
        values.push(y[i]);
        mask.extend_from_slice(x.row_mask(i));
        mask.push(true);
    }
    let mut names = x.names().to_vec();
    names.push("__response".into());
    let joint = MaskedMatrix::new(n, p + 1, values, mask, names)?;
    let mvn = fit_mvn_em(&joint)?;
    let xs: Vec<usize> = (0..p).collect();
    let sxx = submatrix(&mvn.covariance, &xs, &xs);
    let sxy = submatrix(&mvn.covariance, &xs, &[p]);
    let chol = cholesky(&sxx).map_err(|j| {
        Error::RankDeficient(format!(
            "column `{}` is collinear with the preceding columns",
            x.names()[j]
        ))
    })?;
    let beta = chol.solve(&sxy);
    let mut coefficients = vec![mvn.mean[p]];
    for j in 0..p {
        coefficients[0] -= beta[j] * mvn.mean[j];
        coefficients.push(beta[j]);
    }
    let covariate_model = MvnModel {
        mean: mvn.mean.rows(0, p).into_owned(),
        covariance: sxx,
        loglik_trace: mvn.loglik_trace.clone(),
        converged: mvn.converged,
    };
    Ok(EmGlmModel {
        glm: GlmModel {
            family: Family::Linear,
            coefficients,
            iterations: mvn.loglik_trace.len(),
            gradient_norm: 0.0,
            converged: mvn.converged,
            separation: false,
        },
        covariate_model,
        mc_draws: k,
        iterations: mvn.loglik_trace.len(),
        converged: mvn.converged,
        normal_bank,
    })
}

/// Caches conditionals per response pattern.
struct ConditionalCache<'a> {
    model: &'a MvnModel,
    map: HashMap<Vec<bool>, Conditional>,
}

impl<'a> ConditionalCache<'a> {
    fn new(model: &'a MvnModel) -> Self {
        Self {
            model,
            map: HashMap::new(),
        }
    }

    fn get(&mut self, mask: &[bool]) -> Result<&Conditional> {
        if !self.map.contains_key(mask) {
            let c = self.model.conditional(mask)?;
            self.map.insert(mask.to_vec(), c);
        }
        Ok(&self.map[mask])
    }
}

/// Writes `mean + L z` into the hidden coordinates of `out`.
fn fill_draw(out: &mut [f64], cond: &Conditional, mean: &nalgebra::DVector<f64>, z: &[f64]) {
    let h = cond.hidden.len();
    for a in 0..h {
        let mut v = mean[a];
        for (b, zb) in z.iter().enumerate().take(h) {
            v += cond.cov_factor[(a, b)] * zb;
        }
        out[cond.hidden[a]] = v;
    }
}

fn fit_logistic(x: &MaskedMatrix, y: &[f64], k: usize, seed: u64, normal_bank: Vec<f64>) -> Result<EmGlmModel> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract("logistic response must be 0/1".into()));
    }
    let n = x.nrows();
    let p = x.ncols();
    let mvn = fit_mvn_em(x)?;
    let mut cache = ConditionalCache::new(&mvn);
    let mut rng = stream(derive_named(seed, "completions"));

    // Stacked design: complete rows once, incomplete rows K times each.
    let mut design = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut z = vec![0.0; p];
    for i in 0..n {
        let row = x.row_raw(i);
        let mask = x.row_mask(i);
        if mask.iter().all(|&b| b) {
            design.extend_from_slice(row);
            labels.push(y[i]);
            weights.push(1.0);
            continue;
        }
        let cond = cache.get(mask)?;
        let mean = cond.mean(&mvn, row);
        let start = labels.len();
        let mut filled = row.to_vec();
        for _ in 0..k {
            for zj in z.iter_mut().take(cond.hidden.len()) {
                *zj = StandardNormal.sample(&mut rng);
            }
            fill_draw(&mut filled, cond, &mean, &z);
            design.extend_from_slice(&filled);
            labels.push(y[i]);
            weights.push(1.0 / k as f64);
        }
        blocks.push((start, k));
    }
    let names = x.names().to_vec();
    let d = Design::named(&design, p, &names);
    let mut glm = fit_weighted_glm(d, &labels, Some(&weights), Family::Logistic, None)?;
    let mut stable = 0;
    let mut iterations = 0;
    let mut converged = blocks.is_empty() && glm.converged;
    if !blocks.is_empty() {
        for it in 1..=MAX_MCEM_ITERATIONS {
            iterations = it;
            for &(start, len) in &blocks {
                let lls: Vec<f64> = (start..start + len)
                    .map(|r| {
                        let pr = glm.predict(&design[r * p..(r + 1) * p]);
                        if labels[r] == 1.0 {
                            pr.max(f64::MIN_POSITIVE).ln()
                        } else {
                            (1.0 - pr).max(f64::MIN_POSITIVE).ln()
                        }
                    })
                    .collect();
                let top = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = lls.iter().map(|l| (l - top).exp()).sum();
                for (r, l) in (start..start + len).zip(&lls) {
                    weights[r] = (l - top).exp() / total;
                }
            }
            let next = fit_weighted_glm(d, &labels, Some(&weights), Family::Logistic, Some(&glm.coefficients))?;
            let diff: f64 = next
                .coefficients
                .iter()
                .zip(&glm.coefficients)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = glm.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
            glm = next;
            if diff / scale < COEFFICIENT_TOLERANCE {
                stable += 1;
            } else {
                stable = 0;
            }
            if stable >= STABLE_ITERATIONS {
                converged = glm.converged;
                break;
            }
        }
    }
    if !converged {
        log::debug!("logistic EM stopped after {iterations} iterations without stabilizing");
    }
    Ok(EmGlmModel {
        glm,
        covariate_model: mvn.clone(),
        mc_draws: k,
        iterations,
        converged,
        normal_bank,
    })
}

impl EmGlmModel {
    fn predict_with(&self, row: &[f64], mask: &[bool], cond: Option<&Conditional>) -> f64 {
        let cond = match cond {
            None => return self.glm.predict(row),
            Some(c) => c,
        };
        let p = self.covariate_model.dim();
        let mean = cond.mean(&self.covariate_model, row);
        let mut filled: Vec<f64> = row[..p]
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        match self.glm.family {
            Family::Linear => {
                for (a, &j) in cond.hidden.iter().enumerate() {
                    filled[j] = mean[a];
                }
                self.glm.predict(&filled)
            }
            Family::Logistic => {
                let mut acc = 0.0;
                for kk in 0..self.mc_draws {
                    fill_draw(&mut filled, cond, &mean, &self.normal_bank[kk * p..(kk + 1) * p]);
                    acc += expit(self.glm.linear_predictor(&filled));
                }
                acc / self.mc_draws as f64
            }
        }
    }

    /// Prediction for every row of `x`, grouping the conditional solves by pattern.
    pub fn predict_rows(&self, x: &MaskedMatrix) -> Result<Vec<f64>> {
        let mut cache = ConditionalCache::new(&self.covariate_model);
        let mut out = Vec::with_capacity(x.nrows());
        for i in 0..x.nrows() {
            let mask = x.row_mask(i);
            if mask.iter().all(|&b| b) {
                out.push(self.glm.predict(x.row_raw(i)));
            } else {
                let cond = cache.get(mask)?;
                out.push(self.predict_with(x.row_raw(i), mask, Some(cond)));
            }
        }
        Ok(out)
    }
}

/// Prediction for a single masked row (`mask[j]` = observed).
pub fn predict_em(model: &EmGlmModel, row: &[f64], mask: &[bool]) -> Result<f64> {
    if mask.iter().all(|&b| b) {
        return Ok(model.predict_with(row, mask, None));
    }
    let cond = model.covariate_model.conditional(mask)?;
    Ok(model.predict_with(row, mask, Some(&cond)))
}

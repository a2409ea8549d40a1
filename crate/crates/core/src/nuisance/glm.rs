//! Linear and logistic regression on complete design matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, from_upper, rank_one_update};
use crate::stats::{expit, log1p_exp};

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_IRLS_ITERATIONS: usize = 100;
/// Coefficients are clipped to this magnitude; hitting it flags separation.
pub const COEFFICIENT_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmModel {
    pub family: Family,
    /// Intercept first, then one slope per column.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Norm of the mean log-likelihood gradient at the returned coefficients.
    pub gradient_norm: f64,
    pub converged: bool,
    pub separation: bool,
}

impl GlmModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Linear predictor `β₀ + Σ βⱼ xⱼ`.
    #[inline]
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        let b = &self.coefficients;
        let mut eta = b[0];
        for (bj, xj) in b[1..].iter().zip(row) {
            eta += bj * xj;
        }
        eta
    }

    /// Mean response: `η` for linear, `expit(η)` for logistic.
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        let eta = self.linear_predictor(row);
        match self.family {
            Family::Linear => eta,
            Family::Logistic => expit(eta),
        }
    }
}

/// Row-major design without the intercept column.
#[derive(Debug, Clone, Copy)]
pub struct Design<'a> {
    pub x: &'a [f64],
    pub p: usize,
    /// Column names used in rank-deficiency errors.
    pub names: Option<&'a [String]>,
}

impl<'a> Design<'a> {
    pub fn new(x: &'a [f64], p: usize) -> Self {
        Self { x, p, names: None }
    }

    pub fn named(x: &'a [f64], p: usize, names: &'a [String]) -> Self {
        Self {
            x,
            p,
            names: Some(names),
        }
    }

    pub fn nrows(&self) -> usize {
        if self.p == 0 {
            0
        } else {
            self.x.len() / self.p
        }
    }

    fn row(&self, i: usize) -> &'a [f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn column_name(&self, k: usize) -> String {
        if k == 0 {
            return "intercept".into();
        }
        match self.names {
            Some(n) if k - 1 < n.len() => n[k - 1].clone(),
            _ => format!("column {}", k - 1),
        }
    }
}

pub fn fit_glm(design: Design<'_>, y: &[f64], family: Family) -> Result<GlmModel> {
    fit_weighted_glm(design, y, None, family, None)
}

/// Weighted fit; `start` warm-starts the logistic Newton iterations.
pub fn fit_weighted_glm(
    design: Design<'_>,
    y: &[f64],
    weights: Option<&[f64]>,
    family: Family,
    start: Option<&[f64]>,
) -> Result<GlmModel> {
    let n = design.nrows();
    let p = design.p;
    if design.x.len() != n * p || y.len() != n {
        return Err(Error::Contract(format!(
            "design has {} values for {} columns but {} responses",
            design.x.len(),
            p,
            y.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Contract(
                "weights must be finite, nonnegative and one per row".into(),
            ));
        }
    }
    if design.x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Contract("regression inputs must be finite and complete".into()));
    }
    if family == Family::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract("logistic response must be 0/1".into()));
    }
    let total: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => n as f64,
    };
    if total <= 0.0 {
        return Err(Error::DegenerateSample("regression has no rows".into()));
    }
    match family {
        Family::Linear => fit_linear(design, y, weights, total),
        Family::Logistic => fit_logistic(design, y, weights, total, start),
    }
}

fn weight(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

fn solve_normal(design: &Design<'_>, gram: &[f64], rhs: DVector<f64>) -> Result<DVector<f64>> {
    let q = design.p + 1;
    let a = from_upper(gram, q);
    let chol = cholesky(&a).map_err(|k| {
        Error::RankDeficient(format!(
            "column `{}` is collinear with the preceding columns",
            design.column_name(k)
        ))
    })?;
    Ok(chol.solve(&rhs))
}

fn fit_linear(design: Design<'_>, y: &[f64], weights: Option<&[f64]>, total: f64) -> Result<GlmModel> {
    let n = design.nrows();
    let p = design.p;
    let q = p + 1;
    // Center columns so the normal equations stay well conditioned.
    let mut mx = vec![0.0; p];
    let mut my = 0.0;
    for i in 0..n {
        let w = weight(weights, i);
        for (m, v) in mx.iter_mut().zip(design.row(i)) {
            *m += w * v;
        }
        my += w * y[i];
    }
    mx.iter_mut().for_each(|m| *m /= total);
    my /= total;

    let mut gram = vec![0.0; q * q];
    let mut rhs = DVector::zeros(q);
    let mut z = vec![0.0; q];
    for i in 0..n {
        let w = weight(weights, i);
        z[0] = 1.0;
        for (j, v) in design.row(i).iter().enumerate() {
            z[j + 1] = v - mx[j];
        }
        rank_one_update(&mut gram, q, &z, w);
        let r = y[i] - my;
        for k in 0..q {
            rhs[k] += w * z[k] * r;
        }
    }
    let beta_c = solve_normal(&design, &gram, rhs)?;
    let mut coefficients = vec![0.0; q];
    coefficients[0] = my + beta_c[0];
    for j in 0..p {
        coefficients[j + 1] = beta_c[j + 1];
        coefficients[0] -= beta_c[j + 1] * mx[j];
    }
    let mut model = GlmModel {
        family: Family::Linear,
        coefficients,
        iterations: 1,
        gradient_norm: 0.0,
        converged: true,
        separation: false,
    };
    model.gradient_norm = gradient(&design, y, weights, total, &model).1;
    Ok(model)
}

/// Mean log-likelihood gradient and its norm.
fn gradient(design: &Design<'_>, y: &[f64], weights: Option<&[f64]>, total: f64, m: &GlmModel) -> (DVector<f64>, f64) {
    let q = design.p + 1;
    let mut g = DVector::zeros(q);
    for i in 0..design.nrows() {
        let row = design.row(i);
        let r = weight(weights, i) * (y[i] - m.predict(row));
        g[0] += r;
        for j in 0..design.p {
            g[j + 1] += r * row[j];
        }
    }
    g /= total;
    let norm = g.norm();
    (g, norm)
}

fn mean_loglik(design: &Design<'_>, y: &[f64], weights: Option<&[f64]>, total: f64, beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..design.nrows() {
        let row = design.row(i);
        let mut eta = beta[0];
        for (b, x) in beta[1..].iter().zip(row) {
            eta += b * x;
        }
        ll += weight(weights, i) * (y[i] * eta - log1p_exp(eta));
    }
    ll / total
}

fn fit_logistic(
    design: Design<'_>,
    y: &[f64],
    weights: Option<&[f64]>,
    total: f64,
    start: Option<&[f64]>,
) -> Result<GlmModel> {
    let n = design.nrows();
    let q = design.p + 1;
    let mut model = GlmModel {
        family: Family::Logistic,
        coefficients: match start {
            Some(s) if s.len() == q && s.iter().all(|v| v.is_finite()) => s.to_vec(),
            _ => vec![0.0; q],
        },
        iterations: 0,
        gradient_norm: f64::INFINITY,
        converged: false,
        separation: false,
    };
    let mut ll = mean_loglik(&design, y, weights, total, &model.coefficients);
    let mut z = vec![0.0; q];
    for it in 0..MAX_IRLS_ITERATIONS {
        let (g, gnorm) = gradient(&design, y, weights, total, &model);
        model.gradient_norm = gnorm;
        model.iterations = it;
        if gnorm < GRADIENT_TOLERANCE {
            model.converged = true;
            return Ok(model);
        }
        let mut gram = vec![0.0; q * q];
        for i in 0..n {
            let row = design.row(i);
            let mu = model.predict(row);
            let w = weight(weights, i) * mu * (1.0 - mu) / total;
            z[0] = 1.0;
            z[1..].copy_from_slice(row);
            rank_one_update(&mut gram, q, &z, w);
        }
        let step = match solve_normal(&design, &gram, g.clone()) {
            Ok(s) => s,
            // A vanishing Hessian at finite β means fitted probabilities hit 0/1.
            Err(e) if model.coefficients.iter().any(|b| b.abs() > 10.0) => {
                log::debug!("logistic Hessian collapsed: {e}");
                model.separation = true;
                return Ok(model);
            }
            Err(e) => return Err(e),
        };
        // Step halving keeps the likelihood monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = model
                .coefficients
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand_ll = mean_loglik(&design, y, weights, total, &cand);
            if cand_ll >= ll - 1e-15 * (1.0 + ll.abs()) {
                model.coefficients = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if model.coefficients.iter().any(|b| b.abs() > COEFFICIENT_BOUND) {
            for b in model.coefficients.iter_mut() {
                *b = b.clamp(-COEFFICIENT_BOUND, COEFFICIENT_BOUND);
            }
            model.separation = true;
            model.gradient_norm = gradient(&design, y, weights, total, &model).1;
            model.iterations = it + 1;
            return Ok(model);
        }
    }
    let (_, gnorm) = gradient(&design, y, weights, total, &model);
    model.gradient_norm = gnorm;
    model.converged = gnorm < GRADIENT_TOLERANCE;
    model.iterations = model.iterations.max(1);
    Ok(model)
}

/// Ordinary least squares summaries used by the imputation draws.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    /// `(Z'Z + ridge·I)⁻¹` with `Z` including the intercept column.
    pub inverse_gram: DMatrix<f64>,
    pub sse: f64,
}

/// Ridge-stabilized least squares with an intercept.
pub fn least_squares(design: Design<'_>, y: &[f64], ridge: f64) -> Result<LeastSquares> {
    let n = design.nrows();
    let q = design.p + 1;
    let mut gram = vec![0.0; q * q];
    let mut rhs = DVector::zeros(q);
    let mut z = vec![0.0; q];
    for i in 0..n {
        z[0] = 1.0;
        z[1..].copy_from_slice(design.row(i));
        rank_one_update(&mut gram, q, &z, 1.0);
        for k in 0..q {
            rhs[k] += z[k] * y[i];
        }
    }
    let mut a = from_upper(&gram, q);
    for k in 0..q {
        a[(k, k)] += ridge * a[(k, k)].max(1.0);
    }
    let chol =
        cholesky(&a).map_err(|k| Error::RankDeficient(format!("column `{}` is collinear", design.column_name(k))))?;
    let coefficients = chol.solve(&rhs);
    let inverse_gram = chol.inverse();
    let mut sse = 0.0;
    for i in 0..n {
        let row = design.row(i);
        let mut fit = coefficients[0];
        for j in 0..design.p {
            fit += coefficients[j + 1] * row[j];
        }
        sse += (y[i] - fit).powi(2);
    }
    Ok(LeastSquares {
        coefficients,
        inverse_gram,
        sse,
    })
}

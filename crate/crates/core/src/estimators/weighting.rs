//! Sampling-weight estimators: density ratios, IPSW and calibration weighting.

use nalgebra::{DMatrix, DVector};

use crate::data::{StackedSample, TrialSample};
use crate::error::{Error, Result};
use crate::estimators::learner::{Learner, Task};

/// Membership scores are clipped to `[SCORE_CLIP, 1 − SCORE_CLIP]`.
pub const SCORE_CLIP: f64 = 0.01;
pub const CALIBRATION_TOLERANCE: f64 = 1e-8;
pub const CALIBRATION_MAX_STEPS: usize = 200;

/// Odds conversion `r̂ = (n/m)(1 − π̂)/π̂` on a clipped score.
#[inline]
pub fn ratio_from_score(score: f64, n: usize, m: usize) -> f64 {
    let p = score.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP);
    (n as f64 / m as f64) * (1.0 - p) / p
}

#[derive(Debug, Clone)]
pub struct DensityRatio {
    /// `P̂(row ∈ trial | x)` for every stacked row, before clipping.
    pub scores: Vec<f64>,
    /// `r̂` for the trial rows.
    pub ratios: Vec<f64>,
    pub converged: bool,
}

/// Fits a source-membership classifier and converts trial scores to ratios.
pub fn estimate_density_ratio(s: &StackedSample, learner: &Learner, seed: u64) -> Result<DensityRatio> {
    let (n, m) = (s.n_trial(), s.n_target());
    if n == 0 || m == 0 {
        return Err(Error::DegenerateSample("both sources must be non-empty".into()));
    }
    let y: Vec<f64> = s.source().into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
    let fit = learner.fit(&s.covariates, &y, Task::Classification, seed)?;
    let ratios = fit.training[..n].iter().map(|&p| ratio_from_score(p, n, m)).collect();
    Ok(DensityRatio {
        scores: fit.training,
        ratios,
        converged: fit.converged,
    })
}

pub fn diff_in_means(t: &TrialSample) -> Result<f64> {
    t.require_both_arms()?;
    let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
    for (&a, &y) in t.treatment.iter().zip(&t.outcome) {
        if a {
            s1 += y;
            n1 += 1;
        } else {
            s0 += y;
            n0 += 1;
        }
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// Closed-form variance of the difference in means (unequal variances).
pub fn diff_in_means_variance(t: &TrialSample) -> Result<f64> {
    t.require_both_arms()?;
    let arm = |flag: bool| -> Vec<f64> {
        t.treatment
            .iter()
            .zip(&t.outcome)
            .filter(|(&a, _)| a == flag)
            .map(|(_, &y)| y)
            .collect()
    };
    let (y1, y0) = (arm(true), arm(false));
    let v = |ys: &[f64]| {
        if ys.len() < 2 {
            0.0
        } else {
            crate::stats::sample_variance(ys) / ys.len() as f64
        }
    };
    Ok(v(&y1) + v(&y0))
}

/// Horvitz-Thompson arm factor `A/e − (1 − A)/(1 − e)` for the constant
/// trial propensity `e`.
#[inline]
pub fn arm_factor(treated: bool, propensity: f64) -> f64 {
    if treated {
        1.0 / propensity
    } else {
        -1.0 / (1.0 - propensity)
    }
}

pub fn check_propensity(propensity: f64) -> Result<()> {
    if propensity > 0.0 && propensity < 1.0 {
        Ok(())
    } else {
        Err(Error::Spec(format!(
            "treatment propensity must lie in (0, 1), got {propensity}"
        )))
    }
}

/// `(1/n) Σ r̂ᵢ Yᵢ (Aᵢ/e − (1 − Aᵢ)/(1 − e))`, which is `(2/n) Σ r̂ᵢ Yᵢ (2Aᵢ − 1)`
/// at `e = 0.5`, or the per-arm normalized version (free of `e`).
pub fn ipsw(t: &TrialSample, rhat: &[f64], stabilized: bool, propensity: f64) -> Result<f64> {
    check_propensity(propensity)?;
    if rhat.len() != t.len() {
        return Err(Error::Contract("one weight per trial row is required".into()));
    }
    if rhat.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Contract(
            "density-ratio weights must be finite and positive".into(),
        ));
    }
    if stabilized {
        t.require_both_arms()?;
        let (mut w1, mut w0, mut s1, mut s0) = (0.0, 0.0, 0.0, 0.0);
        for ((&a, &y), &r) in t.treatment.iter().zip(&t.outcome).zip(rhat) {
            if a {
                w1 += r;
                s1 += r * y;
            } else {
                w0 += r;
                s0 += r * y;
            }
        }
        Ok(s1 / w1 - s0 / w0)
    } else {
        let n = t.len() as f64;
        let s: f64 = t
            .treatment
            .iter()
            .zip(&t.outcome)
            .zip(rhat)
            .map(|((&a, &y), &r)| arm_factor(a, propensity) * r * y)
            .sum();
        Ok(s / n)
    }
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + a.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Largest unscaled moment imbalance of the softmax weights of `a`.
fn moment_residual(a: &[f64], z: &[f64], kk: usize, scale: &[f64]) -> f64 {
    let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|v| (v - top).exp()).collect();
    let tot: f64 = w.iter().sum();
    (0..kk)
        .map(|d| (w.iter().enumerate().map(|(i, wi)| wi * z[i * kk + d]).sum::<f64>() / tot * scale[d]).abs())
        .fold(0.0, f64::max)
}

/// Entropy-balancing weights: `ω ≥ 0`, `Σω = 1`, `Σ ωᵢ g(Xᵢ) = g̃`.
///
/// `g` is row-major `n × k`. Solved by Newton on the dual
/// `min_λ log Σ exp(λᵀ(gᵢ − g̃))`, whose softmax is `ω`.
pub fn calibration_weights(g: &[f64], k: usize, g_tilde: &[f64]) -> Result<Vec<f64>> {
    if k == 0 || !g.len().is_multiple_of(k) || g_tilde.len() != k {
        return Err(Error::Contract("calibration moments have inconsistent shapes".into()));
    }
    let n = g.len() / k;
    if n == 0 {
        return Err(Error::DegenerateSample("no trial rows to calibrate".into()));
    }
    // Centered and scaled moments; constant columns must already match.
    let mut cols = Vec::new();
    let mut scale = Vec::new();
    for j in 0..k {
        let col: Vec<f64> = (0..n).map(|i| g[i * k + j] - g_tilde[j]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread = hi - lo;
        let magnitude = 1.0 + g_tilde[j].abs();
        if lo > CALIBRATION_TOLERANCE * magnitude || hi < -CALIBRATION_TOLERANCE * magnitude {
            return Err(Error::Infeasible(format!(
                "target moment {j} = {} lies outside the trial range",
                g_tilde[j]
            )));
        }
        if spread <= 1e-12 * magnitude {
            continue;
        }
        cols.push(j);
        scale.push(spread);
    }
    let kk = cols.len();
    if kk == 0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let z: Vec<f64> = (0..n)
        .flat_map(|i| {
            cols.iter()
                .zip(&scale)
                .map(move |(&j, &s)| (g[i * k + j] - g_tilde[j]) / s)
        })
        .collect();
    let row = |i: usize| &z[i * kk..(i + 1) * kk];

    let mut lambda = DVector::<f64>::zeros(kk);
    let scores = |lambda: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| row(i).iter().zip(lambda.iter()).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut a = scores(&lambda);
    let mut obj = log_sum_exp(&a);
    for _ in 0..CALIBRATION_MAX_STEPS {
        let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top < 0.0 && lambda.norm() > 0.0 {
            return Err(Error::Infeasible(
                "target moments lie outside the convex hull of the trial moments".into(),
            ));
        }
        let mut w: Vec<f64> = a.iter().map(|v| (v - top).exp()).collect();
        let tot: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= tot);
        let mut grad = DVector::<f64>::zeros(kk);
        for (i, &wi) in w.iter().enumerate() {
            for (d, zd) in row(i).iter().enumerate() {
                grad[d] += wi * zd;
            }
        }
        let residual = grad.iter().zip(&scale).map(|(r, s)| (r * s).abs()).fold(0.0, f64::max);
        if residual < CALIBRATION_TOLERANCE {
            return Ok(w);
        }
        let mut hess = DMatrix::<f64>::zeros(kk, kk);
        for (i, &wi) in w.iter().enumerate() {
            let r = row(i);
            for p in 0..kk {
                for q in 0..kk {
                    hess[(p, q)] += wi * r[p] * r[q];
                }
            }
        }
        hess -= &grad * grad.transpose();
        let ridge = 1e-12 * (1.0 + hess.trace());
        for d in 0..kk {
            hess[(d, d)] += ridge;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => hess
                .clone()
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Numerical("calibration Hessian is singular".into()))?,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &lambda - &step * t;
            let ca = scores(&cand);
            let cobj = log_sum_exp(&ca);
            // Within rounding of the dual value, judge by the moment residual.
            let flat = (cobj - obj).abs() <= 8.0 * f64::EPSILON * obj.abs().max(1.0);
            let better = if flat {
                moment_residual(&ca, &z, kk, &scale) < residual
            } else {
                cobj <= obj - 1e-4 * t * grad.dot(&step)
            };
            if better {
                lambda = cand;
                a = ca;
                obj = cobj;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) < 0.0 {
        return Err(Error::Infeasible(
            "target moments lie outside the convex hull of the trial moments".into(),
        ));
    }
    Err(Error::Numerical(format!(
        "calibration Newton did not reach the {CALIBRATION_TOLERANCE:e} residual in {CALIBRATION_MAX_STEPS} steps"
    )))
}

/// `Σ ωᵢ Yᵢ (Aᵢ/e − (1 − Aᵢ)/(1 − e))`, i.e. `2 Σ ωᵢ Yᵢ (2Aᵢ − 1)` at `e = 0.5`.
pub fn cw_estimate(t: &TrialSample, omega: &[f64], propensity: f64) -> Result<f64> {
    check_propensity(propensity)?;
    if omega.len() != t.len() {
        return Err(Error::Contract(
            "one calibration weight per trial row is required".into(),
        ));
    }
    Ok(t.treatment
        .iter()
        .zip(&t.outcome)
        .zip(omega)
        .map(|((&a, &y), &w)| arm_factor(a, propensity) * w * y)
        .sum::<f64>())
}

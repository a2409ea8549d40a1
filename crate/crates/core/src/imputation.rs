//! Chained-equations multiple imputation and Rubin's combining rules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{MaskedMatrix, StackedSample};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, from_upper, rank_one_update};
use crate::nuisance::glm::{fit_glm, least_squares, Design, Family};
use crate::par;
use crate::rng::{derive, derive_named, std_normal, stream, StreamRng};
use crate::stats::{expit, t_quantile};

/// Ridge added to the normal equations of every imputation model.
pub const IMPUTATION_RIDGE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Within-study: each source imputed on its own.
    Wi,
    /// Ad hoc: sources pooled, source ignored.
    Ah,
    /// Fixed effect: sources pooled, source indicator as a predictor.
    Fe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiceParams {
    pub imputations: usize,
    pub iterations: usize,
}

impl Default for MiceParams {
    fn default() -> Self {
        Self {
            imputations: 10,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub completed: Vec<MaskedMatrix>,
    pub imputations: usize,
    pub iterations: usize,
}

/// Fully observed predictors that are never imputed, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Auxiliary<'a> {
    pub values: &'a [f64],
    pub ncols: usize,
}

fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0) && values.contains(&0.0) && values.contains(&1.0)
}

pub fn mice_impute(x: &MaskedMatrix, params: MiceParams, seed: u64) -> Result<ImputationSet> {
    mice_impute_with(x, None, params, seed)
}

/// Chained equations with optional auxiliary predictors.
pub fn mice_impute_with(
    x: &MaskedMatrix,
    aux: Option<Auxiliary<'_>>,
    params: MiceParams,
    seed: u64,
) -> Result<ImputationSet> {
    if params.imputations == 0 {
        return Err(Error::Config("at least one imputation is required".into()));
    }
    let n = x.nrows();
    let p = x.ncols();
    let q = aux.map_or(0, |a| a.ncols);
    if let Some(a) = aux {
        if a.values.len() != n * q || a.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "auxiliary predictors must be complete and one row per row".into(),
            ));
        }
    }
    let incomplete: Vec<usize> = (0..p).filter(|&j| x.observed_in_column(j) < n).collect();
    if incomplete.is_empty() {
        return Ok(ImputationSet {
            completed: vec![x.clone(); params.imputations],
            imputations: params.imputations,
            iterations: params.iterations,
        });
    }
    let required = p + q + 2;
    for &j in &incomplete {
        let seen = x.observed_in_column(j);
        if seen < required {
            return Err(Error::InsufficientObservations {
                column: x.names()[j].clone(),
                observed: seen,
                required,
            });
        }
    }
    let completed = par::map_indexed(params.imputations, |chain| {
        let mut rng = stream(derive(seed, chain as u64));
        run_chain(x, aux, &incomplete, params.iterations, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ImputationSet {
        completed,
        imputations: params.imputations,
        iterations: params.iterations,
    })
}

fn run_chain(
    x: &MaskedMatrix,
    aux: Option<Auxiliary<'_>>,
    incomplete: &[usize],
    iterations: usize,
    rng: &mut StreamRng,
) -> Result<MaskedMatrix> {
    let n = x.nrows();
    let p = x.ncols();
    let q = aux.map_or(0, |a| a.ncols);
    let observed: Vec<Vec<f64>> = (0..p).map(|j| x.observed_column(j)).collect();
    let binary: Vec<bool> = observed.iter().map(|c| is_binary(c)).collect();

    // Current completed values, row-major.
    let mut cur = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            cur[i * p + j] = match x.get(i, j) {
                Some(v) => v,
                None => observed[j][rng.random_range(0..observed[j].len())],
            };
        }
    }
    let width = p - 1 + q;
    let mut design_obs = Vec::new();
    let mut target = Vec::new();
    let mut design_mis = Vec::new();
    let mut miss_rows = Vec::new();
    for _ in 0..iterations.max(1) {
        for &j in incomplete {
            design_obs.clear();
            target.clear();
            design_mis.clear();
            miss_rows.clear();
            for i in 0..n {
                let dest = if x.is_observed(i, j) {
                    &mut design_obs
                } else {
                    &mut design_mis
                };
                for k in (0..p).filter(|&k| k != j) {
                    dest.push(cur[i * p + k]);
                }
                if let Some(a) = aux {
                    dest.extend_from_slice(&a.values[i * q..(i + 1) * q]);
                }
                if x.is_observed(i, j) {
                    target.push(cur[i * p + j]);
                } else {
                    miss_rows.push(i);
                }
            }
            let draws = if binary[j] {
                draw_logistic(&design_obs, &target, &design_mis, width, rng)?
            } else {
                draw_linear(&design_obs, &target, &design_mis, width, rng)?
            };
            for (&i, v) in miss_rows.iter().zip(draws) {
                cur[i * p + j] = v;
            }
        }
    }
    Ok(x.fill_missing(|i, j| cur[i * p + j]))
}

fn predictor(beta: &DVector<f64>, row: &[f64]) -> f64 {
    let mut v = beta[0];
    for (k, x) in row.iter().enumerate() {
        v += beta[k + 1] * x;
    }
    v
}

/// Bayesian linear regression draw: `σ*² = SSE/χ²_df`, `β* ~ N(β̂, σ*² V)`.
fn draw_linear(obs: &[f64], y: &[f64], mis: &[f64], width: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let ls = least_squares(Design::new(obs, width), y, IMPUTATION_RIDGE)?;
    let k = width + 1;
    let df = (y.len() as f64 - k as f64).max(1.0);
    let chi: f64 = ChiSquared::new(df)
        .map_err(|e| Error::Numerical(format!("chi-squared draw: {e}")))?
        .sample(rng);
    let sigma = (ls.sse.max(1e-300) / chi).sqrt();
    let l = cholesky(&ls.inverse_gram)
        .map_err(|_| Error::Numerical("imputation posterior covariance is singular".into()))?
        .l();
    let z = DVector::from_iterator(k, (0..k).map(|_| std_normal(rng)));
    let beta = &ls.coefficients + (l * z) * sigma;
    let m = if width == 0 { 0 } else { mis.len() / width };
    Ok((0..m)
        .map(|r| predictor(&beta, &mis[r * width..(r + 1) * width]) + sigma * std_normal(rng))
        .collect())
}

/// Logistic draw: `β* ~ N(β̂, I(β̂)⁻¹)`, then Bernoulli imputations.
fn draw_logistic(obs: &[f64], y: &[f64], mis: &[f64], width: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let glm = fit_glm(Design::new(obs, width), y, Family::Logistic)?;
    let k = width + 1;
    let mut gram = vec![0.0; k * k];
    let mut z = vec![0.0; k];
    for r in 0..y.len() {
        let row = &obs[r * width..(r + 1) * width];
        let mu = glm.predict(row);
        z[0] = 1.0;
        z[1..].copy_from_slice(row);
        rank_one_update(&mut gram, k, &z, mu * (1.0 - mu));
    }
    let mut info: DMatrix<f64> = from_upper(&gram, k);
    for d in 0..k {
        info[(d, d)] += IMPUTATION_RIDGE * info[(d, d)].max(1.0);
    }
    let cov = cholesky(&info)
        .map_err(|_| Error::Numerical("logistic imputation information is singular".into()))?
        .inverse();
    let l = cholesky(&cov)
        .map_err(|_| Error::Numerical("logistic imputation covariance is singular".into()))?
        .l();
    let zz = DVector::from_iterator(k, (0..k).map(|_| std_normal(rng)));
    let beta = DVector::from_column_slice(&glm.coefficients) + l * zz;
    let m = if width == 0 { 0 } else { mis.len() / width };
    Ok((0..m)
        .map(|r| {
            let pr = expit(predictor(&beta, &mis[r * width..(r + 1) * width]));
            if rng.random::<f64>() < pr {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Completed stacked samples under one source-handling strategy.
///
/// WI returns `M²` samples ordered trial-completion-major.
pub fn multi_impute(
    s: &StackedSample,
    strategy: Strategy,
    params: MiceParams,
    seed: u64,
) -> Result<Vec<StackedSample>> {
    match strategy {
        Strategy::Wi => {
            let (trial, target) = s.split();
            let n = trial.len();
            let mut aux = Vec::with_capacity(2 * n);
            for i in 0..n {
                aux.push(if trial.treatment[i] { 1.0 } else { 0.0 });
                aux.push(trial.outcome[i]);
            }
            let trial_sets = mice_impute_with(
                &trial.covariates,
                Some(Auxiliary { values: &aux, ncols: 2 }),
                params,
                derive_named(seed, "wi-trial"),
            )?;
            let target_sets = mice_impute(&target.covariates, params, derive_named(seed, "wi-target"))?;
            let mut out = Vec::with_capacity(params.imputations * params.imputations);
            for tc in &trial_sets.completed {
                for oc in &target_sets.completed {
                    out.push(s.with_covariates(tc.vstack(oc)?)?);
                }
            }
            Ok(out)
        }
        Strategy::Ah => {
            let sets = mice_impute(&s.covariates, params, derive_named(seed, "ah"))?;
            sets.completed.into_iter().map(|c| s.with_covariates(c)).collect()
        }
        Strategy::Fe => {
            let source: Vec<f64> = s.source().into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            let sets = mice_impute_with(
                &s.covariates,
                Some(Auxiliary {
                    values: &source,
                    ncols: 1,
                }),
                params,
                derive_named(seed, "fe"),
            )?;
            sets.completed.into_iter().map(|c| s.with_covariates(c)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub estimate: f64,
    pub imputations: usize,
    pub between: f64,
    pub within: Option<f64>,
    pub total: Option<f64>,
    /// Rubin's degrees of freedom; infinite when `B = 0`.
    pub df: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Rubin's rules. `variances` may be absent, in which case only the point
/// estimate and the between-imputation variance are returned.
pub fn rubin_pool(estimates: &[f64], variances: Option<&[f64]>) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m == 0 {
        return Err(Error::Contract("pooling needs at least one estimate".into()));
    }
    if let Some(v) = variances {
        if v.len() != m || v.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Contract(
                "one nonnegative variance per estimate is required".into(),
            ));
        }
    }
    let mf = m as f64;
    let estimate = estimates.iter().sum::<f64>() / mf;
    let between = if m > 1 {
        estimates.iter().map(|e| (e - estimate).powi(2)).sum::<f64>() / (mf - 1.0)
    } else {
        0.0
    };
    let mut out = PooledEstimate {
        estimate,
        imputations: m,
        between,
        within: None,
        total: None,
        df: None,
        ci_low: None,
        ci_high: None,
    };
    if let Some(v) = variances {
        let within = v.iter().sum::<f64>() / mf;
        let inflated = (1.0 + 1.0 / mf) * between;
        let total = within + inflated;
        let df = if inflated > 0.0 {
            (mf - 1.0) * (1.0 + within / inflated).powi(2)
        } else {
            f64::INFINITY
        };
        let half = t_quantile(0.975, df) * total.sqrt();
        out.within = Some(within);
        out.total = Some(total);
        out.df = Some(df);
        out.ci_low = Some(estimate - half);
        out.ci_high = Some(estimate + half);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{stack, TargetSample, TrialSample};

    fn holes(n: usize, p: usize, rate: f64, seed: u64) -> MaskedMatrix {
        let mut rng = stream(seed);
        let mut v = Vec::new();
        for _ in 0..n {
            let a = std_normal(&mut rng);
            for j in 0..p {
                v.push(a * 0.7 + std_normal(&mut rng) * 0.5 + j as f64);
            }
        }
        let mask = (0..n * p).map(|k| k % p == 0 || rng.random::<f64>() > rate).collect();
        MaskedMatrix::new(n, p, v, mask, MaskedMatrix::default_names(p)).unwrap()
    }

    #[test]
    fn complete_input_is_copied() {
        let x =
            MaskedMatrix::complete(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], MaskedMatrix::default_names(2)).unwrap();
        let s = mice_impute(
            &x,
            MiceParams {
                imputations: 4,
                iterations: 2,
            },
            1,
        )
        .unwrap();
        assert_eq!(s.completed.len(), 4);
        assert!(s.completed.iter().all(|c| c == &x));
    }

    #[test]
    fn observed_entries_survive_and_holes_fill() {
        let x = holes(200, 3, 0.3, 2);
        let s = mice_impute(
            &x,
            MiceParams {
                imputations: 3,
                iterations: 5,
            },
            3,
        )
        .unwrap();
        for c in &s.completed {
            assert!(c.is_complete());
            for i in 0..x.nrows() {
                for j in 0..3 {
                    if let Some(v) = x.get(i, j) {
                        assert_eq!(c.get(i, j), Some(v));
                    }
                }
            }
        }
        assert_ne!(s.completed[0], s.completed[1]);
    }

    #[test]
    fn too_few_observations_is_an_error() {
        let x = MaskedMatrix::new(
            5,
            2,
            vec![1.0, 1.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0, 5.0, 0.0],
            vec![true, true, true, false, true, false, true, false, true, false],
            MaskedMatrix::default_names(2),
        )
        .unwrap();
        assert!(matches!(
            mice_impute(&x, MiceParams::default(), 1),
            Err(Error::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn rubin_hand_cases() {
        let p = rubin_pool(&[1.0, 3.0], Some(&[1.0, 1.0])).unwrap();
        assert_eq!(p.estimate, 2.0);
        assert_eq!(p.within, Some(1.0));
        assert_eq!(p.between, 2.0);
        assert_eq!(p.total, Some(4.0));
        let single = rubin_pool(&[5.0], Some(&[0.25])).unwrap();
        assert_eq!((single.estimate, single.total), (5.0, Some(0.25)));
        let same = rubin_pool(&[2.0, 2.0, 2.0], Some(&[0.5, 0.7, 0.9])).unwrap();
        assert_eq!(same.between, 0.0);
        assert!((same.total.unwrap() - 0.7).abs() < 1e-15);
        assert!(rubin_pool(&[], None).is_err());
    }

    #[test]
    fn wi_cross_product_and_isolation() {
        let n = 60;
        let trial_x = holes(n, 2, 0.2, 4);
        let trial = TrialSample::new(
            trial_x,
            (0..n).map(|i| i % 2 == 0).collect(),
            (0..n).map(|i| i as f64 * 0.1).collect(),
        )
        .unwrap();
        let target = TargetSample::new(holes(80, 2, 0.2, 5));
        let s = stack(&trial, &target).unwrap();
        let params = MiceParams {
            imputations: 3,
            iterations: 3,
        };
        let out = multi_impute(&s, Strategy::Wi, params, 9).unwrap();
        assert_eq!(out.len(), 9);

        // Perturbing the target leaves trial completions unchanged.
        let other_target = TargetSample::new(holes(80, 2, 0.2, 6));
        let s2 = stack(&trial, &other_target).unwrap();
        let out2 = multi_impute(&s2, Strategy::Wi, params, 9).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            let (ta, _) = a.split();
            let (tb, _) = b.split();
            assert_eq!(ta.covariates, tb.covariates);
        }
    }

    #[test]
    fn fe_keeps_source_layout() {
        let n = 50;
        let trial = TrialSample::new(
            holes(n, 2, 0.2, 7),
            vec![true; n / 2].into_iter().chain(vec![false; n - n / 2]).collect(),
            vec![0.0; n],
        )
        .unwrap();
        let target = TargetSample::new(holes(70, 2, 0.2, 8));
        let s = stack(&trial, &target).unwrap();
        for c in multi_impute(
            &s,
            Strategy::Fe,
            MiceParams {
                imputations: 2,
                iterations: 2,
            },
            1,
        )
        .unwrap()
        {
            assert_eq!(c.source(), s.source());
            assert_eq!(c.n_trial(), n);
            assert!(c.covariates.is_complete());
        }
    }
}

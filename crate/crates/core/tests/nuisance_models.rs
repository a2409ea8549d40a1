use ategen::amputation::{ampute, AmputationSpec, Mechanism};
use ategen::data::{MaskedMatrix, StackedSample, TrialSample};
use ategen::dgp::{draw_covariates, Assumption, SimulationConfig};
use ategen::imputation::{mice_impute, multi_impute, MiceParams, Strategy};
use ategen::nuisance::{fit_em_glm, fit_mia_forest, Family, ForestParams, ForestTask};
use ategen::rng::{derive, std_normal, stream};
use ategen::stats::{mean, sample_variance};
use rand::Rng;

fn forest_params() -> ForestParams {
    ForestParams {
        num_trees: 100,
        ..ForestParams::default()
    }
}

fn gaussian_block(n: usize, p: usize, seed: u64) -> (Vec<f64>, MaskedMatrix) {
    let mut rng = stream(seed);
    let v: Vec<f64> = (0..n * p).map(|_| std_normal(&mut rng)).collect();
    let x = MaskedMatrix::complete(n, p, v.clone(), MaskedMatrix::default_names(p)).unwrap();
    (v, x)
}

fn mcar_column(x: &MaskedMatrix, col: usize, rate: f64, seed: u64) -> MaskedMatrix {
    let mut rng = stream(seed);
    let extra: Vec<bool> = (0..x.nrows() * x.ncols())
        .map(|k| k % x.ncols() == col && rng.random::<f64>() < rate)
        .collect();
    x.with_extra_mask(&extra)
}

#[test]
fn forest_learns_missingness_indicator() {
    let fit = |seed| {
        let (_, x) = gaussian_block(2000, 2, seed);
        let x = mcar_column(&x, 0, 0.5, seed + 1);
        let y: Vec<f64> = (0..2000).map(|i| if x.is_observed(i, 0) { 0.0 } else { 1.0 }).collect();
        (x, y)
    };
    let (x, y) = fit(1);
    let f = fit_mia_forest(&x, &y, &forest_params(), ForestTask::Probability, 3).unwrap();
    let (xt, yt) = fit(100);
    let pred = f.predict_rows(&xt);
    let correct = pred.iter().zip(&yt).filter(|(p, y)| (**p > 0.5) == (**y > 0.5)).count();
    let acc = correct as f64 / yt.len() as f64;
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn forest_fits_step_function() {
    let data = |seed| {
        let (v, x) = gaussian_block(5000, 2, seed);
        let y: Vec<f64> = (0..5000).map(|i| if v[2 * i] > 0.0 { 10.0 } else { 0.0 }).collect();
        (x, y)
    };
    let (x, y) = data(5);
    let f = fit_mia_forest(&x, &y, &forest_params(), ForestTask::Regression, 6).unwrap();
    let (xt, yt) = data(50);
    let pred = f.predict_rows(&xt);
    let rmse = (pred.iter().zip(&yt).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / yt.len() as f64).sqrt();
    assert!(rmse < 1.0, "rmse {rmse}");
}

#[test]
fn linear_em_recovers_coefficients_under_mcar() {
    let beta = [1.0, 2.0, -1.0, 0.5, 0.0];
    let cfg = SimulationConfig::linear(1, 1, Assumption::Standard);
    let reps = 100;
    let fits: Vec<Vec<f64>> = (0..reps)
        .map(|r| {
            let mut rng = stream(derive(77, r));
            let full = draw_covariates(400, &cfg, &mut rng).unwrap();
            let y: Vec<f64> = (0..400)
                .map(|i| {
                    let row = full.row_raw(i);
                    beta[0] + (0..4).map(|j| beta[j + 1] * row[j]).sum::<f64>() + std_normal(&mut rng)
                })
                .collect();
            let x = ampute(&full, &AmputationSpec::new(Mechanism::Mcar, 0.2), &mut rng).unwrap();
            assert!(x.missing_count() > 0);
            fit_em_glm(&x, &y, Family::Linear, 10, r).unwrap().glm.coefficients
        })
        .collect();
    for (j, &b) in beta.iter().enumerate() {
        let col: Vec<f64> = fits.iter().map(|c| c[j]).collect();
        let se = (sample_variance(&col) / reps as f64).sqrt();
        let m = mean(&col);
        assert!(
            (m - b).abs() <= 3.0 * se,
            "coefficient {j}: mean {m}, truth {b}, se {se}"
        );
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn mice_preserves_bivariate_slope() {
    let seeds = 20;
    let diffs: Vec<f64> = (0..seeds)
        .map(|s| {
            let mut rng = stream(derive(31, s));
            let n = 5000;
            let mut v = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let a = std_normal(&mut rng);
                v.extend([a, 0.7 * a + 0.5 * std_normal(&mut rng)]);
            }
            let x = MaskedMatrix::complete(n, 2, v.clone(), MaskedMatrix::default_names(2)).unwrap();
            let holed = mcar_column(&x, 1, 0.3, derive(32, s));
            let set = mice_impute(
                &holed,
                MiceParams {
                    imputations: 1,
                    iterations: 5,
                },
                s,
            )
            .unwrap();
            let c = &set.completed[0];
            let x1: Vec<f64> = (0..n).map(|i| c.row_raw(i)[0]).collect();
            let x2: Vec<f64> = (0..n).map(|i| c.row_raw(i)[1]).collect();
            let full2: Vec<f64> = (0..n).map(|i| v[2 * i + 1]).collect();
            ols_slope(&x1, &x2) - ols_slope(&x1, &full2)
        })
        .collect();
    let sd = sample_variance(&diffs).sqrt() / (seeds as f64).sqrt();
    let m = mean(&diffs);
    assert!(m.abs() <= 3.0 * sd, "mean slope gap {m}, MC-SD {sd}");
}

/// Trial `X₁ ~ N(0, 1)`, target `X₁ ~ N(2, 1)`, 40% MCAR holes in `X₁`.
fn shifted_sources(seed: u64) -> StackedSample {
    let (n, m) = (600, 1500);
    let mut rng = stream(seed);
    let mut v = Vec::new();
    for i in 0..n + m {
        let shift = if i < n { 0.0 } else { 2.0 };
        v.extend([shift + std_normal(&mut rng), std_normal(&mut rng)]);
    }
    let x = MaskedMatrix::complete(n + m, 2, v, MaskedMatrix::default_names(2)).unwrap();
    let x = mcar_column(&x, 0, 0.4, seed + 1);
    let trial = TrialSample::new(
        x.select_rows(&(0..n).collect::<Vec<_>>()),
        (0..n).map(|i| i % 2 == 0).collect(),
        (0..n).map(|_| std_normal(&mut rng)).collect(),
    )
    .unwrap();
    let target = ategen::data::TargetSample::new(x.select_rows(&(n..n + m).collect::<Vec<_>>()));
    ategen::data::stack(&trial, &target).unwrap()
}

/// Mean of the imputed `X₁` entries of each source, per completed set.
fn imputed_source_means(s: &StackedSample, completed: &[StackedSample]) -> Vec<(f64, f64)> {
    completed
        .iter()
        .map(|c| {
            let pick = |rows: std::ops::Range<usize>| {
                let v: Vec<f64> = rows
                    .filter(|&i| !s.covariates.is_observed(i, 0))
                    .map(|i| c.covariates.row_raw(i)[0])
                    .collect();
                mean(&v)
            };
            (pick(s.trial_rows()), pick(s.target_rows()))
        })
        .collect()
}

#[test]
fn fixed_effect_imputation_keeps_source_means_apart() {
    let s = shifted_sources(3);
    let params = MiceParams {
        imputations: 20,
        iterations: 5,
    };
    let fe = imputed_source_means(&s, &multi_impute(&s, Strategy::Fe, params, 4).unwrap());
    for (k, truth) in [(0usize, 0.0), (1, 2.0)] {
        let v: Vec<f64> = fe.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect();
        let sd = sample_variance(&v).sqrt();
        // Spread across imputations plus the sampling error of the holes.
        let holes = (0..s.len())
            .filter(|&i| !s.covariates.is_observed(i, 0) && (i < s.n_trial()) == (k == 0))
            .count();
        let tol = 3.0 * (sd * sd + 1.0 / holes as f64).sqrt();
        assert!(
            (mean(&v) - truth).abs() <= tol,
            "source {k}: imputed mean {} vs {truth} (tol {tol})",
            mean(&v)
        );
    }
    let ah = imputed_source_means(&s, &multi_impute(&s, Strategy::Ah, params, 4).unwrap());
    let gap = |v: &[(f64, f64)]| mean(&v.iter().map(|p| p.1 - p.0).collect::<Vec<_>>());
    assert!(gap(&fe) > 1.5, "FE gap {}", gap(&fe));
    assert!(gap(&ah) < 0.5, "AH gap {}", gap(&ah));
}

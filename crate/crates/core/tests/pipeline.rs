mod common;

use ategen::amputation::{AmputationSpec, Mechanism};
use ategen::data::{stack, MaskedMatrix, StackedSample, TargetSample, TrialSample};
use ategen::dgp::{
    draw_covariates, outcome_mean, selection_probability, simulate, simulate_with_pool, Assumption, Missingness,
    SimulationConfig,
};
use ategen::estimators::{
    aipsw, bootstrap_ci, calibration_moments, calibration_weights, conditional_outcome, cw_estimate, estimate,
    estimate_density_ratio, fit_outcome_models, ipsw, Engine, Estimator, Handler, Learner, MethodSpec, Moments,
    OutcomePredictions,
};
use ategen::harness::config::MissingnessSection;
use ategen::harness::grid::build_scenarios;
use ategen::harness::overlap::{histogram, overlap_coefficient, HISTOGRAM_BINS};
use ategen::harness::{overlap_diagnostics, run_grid, DgpSection, GridConfig, MethodsSection, RunSection};
use ategen::nuisance::{fit_mia_forest, ForestParams, ForestTask};
use ategen::rng::{derive, stream};
use ategen::stats::mean;
use rand::Rng;

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = k as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Trial and target both drawn from the covariate law, no selection.
fn same_distribution(n: usize, m: usize, seed: u64) -> StackedSample {
    let cfg = SimulationConfig::linear(1, 1, Assumption::Standard);
    let mut rng = stream(seed);
    let tx = draw_covariates(n, &cfg, &mut rng).unwrap();
    let ox = draw_covariates(m, &cfg, &mut rng).unwrap();
    let a: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| outcome_mean(tx.row_raw(i), a[i], cfg.outcome_model, 1.0))
        .collect();
    stack(&TrialSample::new(tx, a, y).unwrap(), &TargetSample::new(ox)).unwrap()
}

#[test]
fn density_ratio_is_one_on_equal_distributions() {
    let s = same_distribution(5000, 5000, 8);
    let r = estimate_density_ratio(&s, &Learner::Glm, 0).unwrap();
    let m = mean(&r.ratios);
    assert!((m - 1.0).abs() <= 0.05, "mean ratio {m}");
}

#[test]
fn density_ratio_rises_where_selection_is_rare() {
    let s = common::toy_sample(4, 1000, 5000, None);
    let r = estimate_density_ratio(&s, &Learner::Glm, 0).unwrap();
    let (x1, sel): (Vec<f64>, Vec<f64>) = s
        .trial_rows()
        .map(|i| {
            let row = s.covariates.row_raw(i);
            let p = selection_probability(
                row,
                s.covariates.row_mask(i),
                ategen::dgp::SelectionModel::StdLinear,
                1.0,
            );
            (row[0], p.unwrap())
        })
        .unzip();
    let with_sel = spearman(&r.ratios, &sel);
    let with_x1 = spearman(&r.ratios, &x1);
    assert!(
        with_sel < -0.8,
        "rank correlation with selection probability {with_sel}"
    );
    assert!(with_x1 > 0.0, "rank correlation with X1 {with_x1}");
}

#[test]
fn conditional_outcome_on_trial_covariates_is_the_in_trial_g_formula() {
    let s = common::toy_sample(6, 400, 10, None);
    let (trial, _) = s.split();
    let same = stack(&trial, &TargetSample::new(trial.covariates.clone())).unwrap();
    let mu = fit_outcome_models(&same, &Learner::Glm, 0).unwrap();
    let co = conditional_outcome(&mu.mu1_target, &mu.mu0_target).unwrap();
    let g: Vec<f64> = mu.mu1_trial.iter().zip(&mu.mu0_trial).map(|(a, b)| a - b).collect();
    assert!((co - mean(&g)).abs() <= 1e-9 * (1.0 + co.abs()), "{co} vs {}", mean(&g));
}

#[test]
fn stabilization_is_inert_when_ratios_average_one_per_arm() {
    // The identity needs arm sizes n·e, so the arms are made equal.
    let s = common::toy_sample(2, 300, 10, None);
    let (mut t, _) = s.split();
    t.treatment = (0..t.len()).map(|i| i % 2 == 0).collect();
    if t.len() % 2 == 1 {
        t = t.select_rows(&(0..t.len() - 1).collect::<Vec<_>>());
    }
    let mut rng = stream(1);
    let mut r: Vec<f64> = (0..t.len()).map(|_| 0.1 + rng.random::<f64>() * 4.0).collect();
    for arm in [true, false] {
        let rows: Vec<usize> = (0..t.len()).filter(|&i| t.treatment[i] == arm).collect();
        let avg = rows.iter().map(|&i| r[i]).sum::<f64>() / rows.len() as f64;
        rows.iter().for_each(|&i| r[i] /= avg);
    }
    let a = ipsw(&t, &r, false, 0.5).unwrap();
    let b = ipsw(&t, &r, true, 0.5).unwrap();
    assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn constant_outcome_per_arm_gives_zero_width_interval() {
    let base = common::toy_sample(12, 300, 1000, None);
    let (mut trial, target) = base.split();
    trial.outcome = trial.treatment.iter().map(|&a| if a { 5.0 } else { 2.0 }).collect();
    let s = stack(&trial, &target).unwrap();
    for est in [Estimator::Dm, Estimator::Co] {
        let mut spec = MethodSpec::new(est, Engine::Parametric, Handler::None);
        spec.stabilized = true;
        let point = estimate(&s, &spec, 0).unwrap().estimate;
        let b = bootstrap_ci(&s, &spec, 30, 5).unwrap();
        assert!(
            (b.high - b.low).abs() <= 1e-9,
            "{}: width {}",
            spec.label(),
            b.high - b.low
        );
        assert!(
            (b.low - point).abs() <= 1e-9,
            "{}: interval at {} vs point {point}",
            spec.label(),
            b.low
        );
    }
    let mut spec = MethodSpec::new(Estimator::Ipsw, Engine::Parametric, Handler::None);
    spec.stabilized = true;
    let b = bootstrap_ci(&s, &spec, 30, 5).unwrap();
    assert!((b.high - b.low).abs() <= 1e-9 && (b.low - 3.0).abs() <= 1e-9);
}

#[test]
fn identical_sources_overlap_almost_fully() {
    let s = same_distribution(5000, 5000, 9);
    let o = overlap_diagnostics(&s, Engine::Parametric, Handler::None, 0).unwrap();
    assert!(o.overlap_coefficient > 0.9, "overlap {}", o.overlap_coefficient);
}

/// In-sample forest scores concentrate by source on CIS data. The
/// out-of-bag scores used for weighting do not, so they are not compared.
#[test]
fn in_sample_forest_scores_separate_cis_sources_more_than_logistic() {
    let mut cfg = SimulationConfig::linear(500, 5000, Assumption::Cis);
    cfg.missingness = Missingness::Shared {
        spec: AmputationSpec::new(Mechanism::Mcar, 0.2),
    };
    cfg.seed = 2;
    let s = simulate(&cfg).unwrap().stacked().unwrap();
    let y: Vec<f64> = s.source().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let params = ForestParams {
        num_trees: 100,
        ..ForestParams::default()
    };
    let f = fit_mia_forest(&s.covariates, &y, &params, ForestTask::Probability, 1).unwrap();
    let forest = overlap_coefficient(&histogram(&f.predict_rows(&s.covariates), &s.source(), HISTOGRAM_BINS));
    let logistic = overlap_diagnostics(&s, Engine::Parametric, Handler::AhMi, 0)
        .unwrap()
        .overlap_coefficient;
    assert!(forest < logistic, "forest {forest} vs logistic {logistic}");
}

/// `r(x) = f_target(x) / f_trial(x) = P(selected) / p(x)` and the exact
/// outcome surfaces.
fn oracle_estimates(n: usize, seed: u64, rate: f64) -> [f64; 4] {
    let mut cfg = SimulationConfig::linear(n, 10 * n, Assumption::Standard);
    cfg.seed = seed;
    let s = simulate_with_pool(&cfg, (n as f64 / rate).round() as usize)
        .unwrap()
        .stacked()
        .unwrap();
    let (t, o) = s.split();
    let r: Vec<f64> = (0..t.len())
        .map(|i| {
            rate / selection_probability(
                t.covariates.row_raw(i),
                t.covariates.row_mask(i),
                cfg.selection_model,
                1.0,
            )
            .unwrap()
        })
        .collect();
    let surface = |x: &MaskedMatrix, a: bool| -> Vec<f64> {
        (0..x.nrows())
            .map(|i| outcome_mean(x.row_raw(i), a, cfg.outcome_model, 1.0))
            .collect()
    };
    let mu = OutcomePredictions {
        mu1_trial: surface(&t.covariates, true),
        mu0_trial: surface(&t.covariates, false),
        mu1_target: surface(&o.covariates, true),
        mu0_target: surface(&o.covariates, false),
        converged: true,
    };
    let (g, k) = calibration_moments(&t.covariates, Moments::First).unwrap();
    let (gt, _) = calibration_moments(&o.covariates, Moments::First).unwrap();
    let target_mean: Vec<f64> = (0..k)
        .map(|j| gt.iter().skip(j).step_by(k).sum::<f64>() / o.len() as f64)
        .collect();
    let omega = calibration_weights(&g, k, &target_mean).unwrap();
    [
        ipsw(&t, &r, false, 0.5).unwrap(),
        conditional_outcome(&mu.mu1_target, &mu.mu0_target).unwrap(),
        aipsw(&t, &r, &mu, 0.5).unwrap(),
        cw_estimate(&t, &omega, 0.5).unwrap(),
    ]
}

#[test]
fn oracle_nuisance_errors_shrink_with_sample_size() {
    let rate = SimulationConfig::linear(1000, 1, Assumption::Standard)
        .pilot_selection_rate()
        .unwrap();
    let sizes = [500usize, 1000, 2000];
    let reps = 40;
    let mae: Vec<[f64; 4]> = sizes
        .iter()
        .map(|&n| {
            let mut acc = [0.0; 4];
            for r in 0..reps {
                let e = oracle_estimates(n, derive(n as u64, r), rate);
                for k in 0..4 {
                    acc[k] += (e[k] - 27.4).abs() / reps as f64;
                }
            }
            acc
        })
        .collect();
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    for (k, name) in ["IPSW", "CO", "AIPSW", "CW"].iter().enumerate() {
        let ly: Vec<f64> = mae.iter().map(|m| m[k].ln()).collect();
        let (mx, my) = (mean(&lx), mean(&ly));
        let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(
            slope < 0.0,
            "{name}: mean absolute errors {:?} give slope {slope}",
            mae.iter().map(|m| m[k]).collect::<Vec<_>>()
        );
    }
}

fn small_grid() -> GridConfig {
    let mut dgp = DgpSection::linear(ategen::dgp::SelectionModel::StdLinear);
    dgp.trial_size = 200;
    dgp.target_size = 1000;
    GridConfig {
        dgp,
        missingness: MissingnessSection::default(),
        methods: MethodsSection::new(&[Estimator::Ipsw, Estimator::Co], &[Handler::None]),
        run: RunSection::default(),
    }
}

#[test]
fn one_replication_of_two_methods_gives_one_row_with_two_estimates() {
    let g = run_grid(&small_grid(), 1, 3, None).unwrap();
    assert_eq!(g.results.len(), 1);
    assert_eq!(g.results[0].cells.len(), 2);
    assert!(g.results[0].cells.iter().all(|c| c.estimate.is_some()));
}

#[test]
fn grid_is_deterministic_under_the_master_seed() {
    let mut cfg = small_grid();
    cfg.missingness.scenarios = vec![
        ategen::harness::ScenarioMissingness::shared("mcar", Mechanism::Mcar, 0.2),
        ategen::harness::ScenarioMissingness::shared("mar", Mechanism::Mar, 0.2),
    ];
    cfg.methods = MethodsSection::new(&[Estimator::Aipsw, Estimator::Cw], &[Handler::Cc, Handler::FeMi]);
    cfg.methods.mice.imputations = 2;
    cfg.methods.mice.iterations = 2;
    let strip = |g: ategen::harness::GridOutput| {
        g.results
            .into_iter()
            .map(|r| (r.scenario, r.replication, r.seed, r.cells))
            .collect::<Vec<_>>()
    };
    let a = strip(run_grid(&cfg, 3, 11, None).unwrap());
    let b = strip(run_grid(&cfg, 3, 11, None).unwrap());
    assert_eq!(a.len(), 6);
    assert_eq!(a, b);
    let c = strip(run_grid(&cfg, 3, 12, None).unwrap());
    assert_ne!(a, c);
    assert_eq!(build_scenarios(&cfg).unwrap().len(), 2);
}

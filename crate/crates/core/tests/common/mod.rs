//! Oracles shared by the integration tests and the acceptance suite.
//! Each check returns a one-line detail on success and the reason on failure.
#![allow(dead_code)]

use ategen::amputation::{AmputationSpec, Mechanism};
use ategen::data::{MaskedMatrix, StackedSample};
use ategen::dgp::{simulate, Assumption, Missingness, SimulationConfig};
use ategen::estimators::{
    aipsw, calibration_weights, conditional_outcome, estimate, ipsw, Engine, Estimator, Handler, MethodSpec,
    OutcomePredictions,
};
use ategen::imputation::rubin_pool;
use ategen::nuisance::{best_mia_split, fit_mvn_em, goes_left, SplitType};
use ategen::rng::{std_normal, stream};
use rand::Rng;

pub type Check = Result<String, String>;

/// Selection rate of the StdLinear design is about 2%.
pub const POOL_PER_TRIAL_ROW: usize = 50;

/// Small StdLinear data set with roughly `trial` trial rows and a fixed pool
/// so no pilot run is needed.
pub fn toy_sample(seed: u64, trial: usize, target: usize, mechanism: Option<Mechanism>) -> StackedSample {
    let mut cfg = SimulationConfig::linear(0, target, Assumption::Standard);
    cfg.trial_size = 1;
    cfg.pool_size = Some(trial * POOL_PER_TRIAL_ROW);
    cfg.seed = seed;
    cfg.missingness = match mechanism {
        Some(m) => Missingness::Shared {
            spec: AmputationSpec::new(m, 0.2),
        },
        None => Missingness::None,
    };
    simulate(&cfg).expect("toy simulation").stacked().expect("stack")
}

/// Minimizes the 1-D entropy-balancing dual on a grid, then refines by
/// ternary search, and returns the implied weights.
pub fn dual_grid_weights(g: &[f64], g_tilde: f64) -> Vec<f64> {
    let dual = |l: f64| -> f64 {
        let m = g.iter().map(|&v| l * (v - g_tilde)).fold(f64::NEG_INFINITY, f64::max);
        m + g.iter().map(|&v| (l * (v - g_tilde) - m).exp()).sum::<f64>().ln()
    };
    let (lo, hi, steps) = (-20.0, 20.0, 40_000);
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|i| lo + i as f64 * h)
        .min_by(|a, b| dual(*a).total_cmp(&dual(*b)))
        .unwrap();
    let (mut a, mut b) = (best - h, best + h);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if dual(m1) < dual(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let l = 0.5 * (a + b);
    let e: Vec<f64> = g.iter().map(|&v| (l * v).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn calibration_vs_grid_dual() -> Check {
    let g = [0.0, 1.0, 2.0];
    let newton = calibration_weights(&g, 1, &[1.5]).map_err(|e| e.to_string())?;
    let grid = dual_grid_weights(&g, 1.5);
    let diff = newton.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if diff <= 1e-6 {
        Ok(format!("max weight difference {diff:.2e}"))
    } else {
        Err(format!("Newton {newton:?} vs grid {grid:?} (difference {diff:.2e})"))
    }
}

fn sse(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - m) * (y - m)).sum()
}

/// Enumerates every (type, threshold) pair directly from the partition it
/// induces; same order and tie rule as the production scan.
pub fn brute_force_split(xs: &[Option<f64>], ys: &[f64], min_leaf: usize) -> Option<(SplitType, Option<f64>, f64)> {
    let parent = sse(ys);
    let tol = 1e-12 * (1.0 + parent.abs());
    let mut obs: Vec<f64> = xs.iter().flatten().copied().collect();
    obs.sort_by(f64::total_cmp);
    obs.dedup();
    let thresholds: Vec<f64> = obs.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    let mut candidates: Vec<(SplitType, Option<f64>)> = Vec::new();
    for t in [SplitType::MissingWithLow, SplitType::MissingWithHigh] {
        candidates.extend(thresholds.iter().map(|&c| (t, Some(c))));
    }
    candidates.push((SplitType::MissingAlone, None));
    let mut best: Option<(SplitType, Option<f64>, f64)> = None;
    for (t, c) in candidates {
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for (x, &y) in xs.iter().zip(ys) {
            if goes_left(t, c.unwrap_or(0.0), *x) {
                l.push(y);
            } else {
                r.push(y);
            }
        }
        if l.len() < min_leaf.max(1) || r.len() < min_leaf.max(1) {
            continue;
        }
        let gain = (parent - sse(&l) - sse(&r)).max(0.0);
        if best.is_none_or(|b| gain > b.2 + tol) {
            best = Some((t, c, gain));
        }
    }
    best
}

pub fn mia_split_matches_enumeration(cases: usize, seed: u64) -> Check {
    let mut rng = stream(seed);
    for case in 0..cases {
        let n = rng.random_range(1..=12);
        let levels = rng.random_range(1..=6);
        let xs: Vec<Option<f64>> = (0..n)
            .map(|_| (rng.random::<f64>() > 0.3).then(|| rng.random_range(0..levels) as f64 * 0.5))
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let min_leaf = rng.random_range(1..=3);
        let got = best_mia_split(&xs, &ys, min_leaf).map(|s| (s.split_type, s.threshold, s.gain));
        let want = brute_force_split(&xs, &ys, min_leaf);
        let same = match (got, want) {
            (None, None) => true,
            (Some(a), Some(b)) => a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= 1e-9 * (1.0 + b.2),
            _ => false,
        };
        if !same {
            return Err(format!(
                "case {case}: xs={xs:?} ys={ys:?} min_leaf={min_leaf}: got {got:?}, enumeration {want:?}"
            ));
        }
    }
    Ok(format!("{cases} random nodes of at most 12 samples agree"))
}

pub fn rubin_hand_cases() -> Check {
    let p = rubin_pool(&[1.0, 3.0], Some(&[1.0, 1.0])).map_err(|e| e.to_string())?;
    let ok_pair = p.estimate == 2.0 && p.within == Some(1.0) && p.between == 2.0 && p.total == Some(4.0);
    let one = rubin_pool(&[5.0], Some(&[0.3])).map_err(|e| e.to_string())?;
    let ok_one = one.estimate == 5.0 && one.total == Some(0.3) && one.between == 0.0;
    let same = rubin_pool(&[2.5; 4], Some(&[0.5, 0.7, 0.9, 1.1])).map_err(|e| e.to_string())?;
    let ok_same = same.between == 0.0 && same.total == Some(0.8);
    if ok_pair && ok_one && ok_same {
        Ok("(1,3)/(1,1) gives 2, W=1, B=2, T=4; M=1 and identical inputs give T=W".into())
    } else {
        Err(format!("pair {p:?}, single {one:?}, identical {same:?}"))
    }
}

pub fn mvn_em_vs_monotone_closed_form(seed: u64) -> Check {
    let n = 600;
    let mut rng = stream(seed);
    let (mut vals, mut mask) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let a = std_normal(&mut rng);
        let b = 0.7 * a + 0.5 * std_normal(&mut rng) + 3.0;
        vals.extend([a, b]);
        mask.extend([true, rng.random::<f64>() > 0.35]);
    }
    let x = MaskedMatrix::new(n, 2, vals.clone(), mask.clone(), MaskedMatrix::default_names(2)).unwrap();
    let m = fit_mvn_em(&x).map_err(|e| e.to_string())?;
    let x1: Vec<f64> = (0..n).map(|i| vals[2 * i]).collect();
    let mu1 = x1.iter().sum::<f64>() / n as f64;
    let s11 = x1.iter().map(|v| (v - mu1).powi(2)).sum::<f64>() / n as f64;
    let cc: Vec<usize> = (0..n).filter(|&i| mask[2 * i + 1]).collect();
    let nc = cc.len() as f64;
    let a_bar = cc.iter().map(|&i| vals[2 * i]).sum::<f64>() / nc;
    let b_bar = cc.iter().map(|&i| vals[2 * i + 1]).sum::<f64>() / nc;
    let saa = cc.iter().map(|&i| (vals[2 * i] - a_bar).powi(2)).sum::<f64>() / nc;
    let sab = cc
        .iter()
        .map(|&i| (vals[2 * i] - a_bar) * (vals[2 * i + 1] - b_bar))
        .sum::<f64>()
        / nc;
    let sbb = cc.iter().map(|&i| (vals[2 * i + 1] - b_bar).powi(2)).sum::<f64>() / nc;
    let b1 = sab / saa;
    let b0 = b_bar - b1 * a_bar;
    let want = [mu1, b0 + b1 * mu1, s11, b1 * s11, sbb - b1 * sab + b1 * b1 * s11];
    let got = [
        m.mean[0],
        m.mean[1],
        m.covariance[(0, 0)],
        m.covariance[(0, 1)],
        m.covariance[(1, 1)],
    ];
    let diff = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if diff <= 1e-6 {
        Ok(format!("max parameter difference {diff:.2e}"))
    } else {
        Err(format!("EM {got:?} vs closed form {want:?}"))
    }
}

pub fn aipsw_reduction_identities(seed: u64) -> Check {
    let s = toy_sample(seed, 300, 800, None);
    let (trial, target) = s.split();
    let n = trial.len();
    let m = target.len();
    let mut rng = stream(seed ^ 0xa5a5);
    let rhat: Vec<f64> = (0..n).map(|_| 0.2 + 3.0 * rng.random::<f64>()).collect();
    let noise =
        |rng: &mut ategen::rng::StreamRng, k: usize| -> Vec<f64> { (0..k).map(|_| 40.0 * std_normal(rng)).collect() };
    let zero = OutcomePredictions {
        mu1_trial: vec![0.0; n],
        mu0_trial: vec![0.0; n],
        mu1_target: vec![0.0; m],
        mu0_target: vec![0.0; m],
        converged: true,
    };
    let a0 = aipsw(&trial, &rhat, &zero, 0.5).map_err(|e| e.to_string())?;
    let i0 = ipsw(&trial, &rhat, false, 0.5).map_err(|e| e.to_string())?;
    let exact = OutcomePredictions {
        mu1_trial: trial
            .treatment
            .iter()
            .zip(&trial.outcome)
            .zip(noise(&mut rng, n))
            .map(|((&a, &y), z)| if a { y } else { z })
            .collect(),
        mu0_trial: trial
            .treatment
            .iter()
            .zip(&trial.outcome)
            .zip(noise(&mut rng, n))
            .map(|((&a, &y), z)| if a { z } else { y })
            .collect(),
        mu1_target: noise(&mut rng, m),
        mu0_target: noise(&mut rng, m),
        converged: true,
    };
    let a1 = aipsw(&trial, &rhat, &exact, 0.5).map_err(|e| e.to_string())?;
    let c1 = conditional_outcome(&exact.mu1_target, &exact.mu0_target).map_err(|e| e.to_string())?;
    let d0 = (a0 - i0).abs() / (1.0 + i0.abs());
    let d1 = (a1 - c1).abs() / (1.0 + c1.abs());
    if d0 <= 1e-12 && d1 <= 1e-12 {
        Ok(format!("relative gaps {d0:.1e} (to IPSW) and {d1:.1e} (to CO)"))
    } else {
        Err(format!("AIPSW {a0} vs IPSW {i0}; AIPSW {a1} vs CO {c1}"))
    }
}

/// Overwrites every masked covariate with arbitrary finite values.
pub fn scramble(s: &StackedSample, seed: u64) -> StackedSample {
    let mut rng = stream(seed);
    let x = s.covariates.overwrite_masked(|_, _| 1e6 * (rng.random::<f64>() - 0.5));
    s.with_covariates(x).unwrap()
}

pub fn scramble_specs() -> Vec<MethodSpec> {
    let mut out = Vec::new();
    for (est, handler, engine) in [
        (Estimator::Aipsw, Handler::Cc, Engine::Parametric),
        (Estimator::Cw, Handler::Cc, Engine::Parametric),
        (Estimator::Aipsw, Handler::FeMi, Engine::Parametric),
        (Estimator::Cw, Handler::WiMi, Engine::Parametric),
        (Estimator::Ipsw, Handler::AhMi, Engine::Parametric),
        (Estimator::Aipsw, Handler::Em, Engine::Parametric),
        (Estimator::Aipsw, Handler::Mia, Engine::Forest),
    ] {
        let mut spec = MethodSpec::new(est, engine, handler);
        spec.forest.num_trees = 25;
        spec.mice.imputations = 2;
        spec.mice.iterations = 3;
        spec.em_draws = 10;
        spec.pooling_bootstrap = 0;
        out.push(spec);
    }
    out
}

/// Bit-identical estimates after scrambling masked entries.
pub fn scramble_fuzz(seed: u64) -> Check {
    let s = toy_sample(seed, 300, 1000, Some(Mechanism::Mcar));
    let t = scramble(&s, seed.wrapping_add(1));
    for spec in scramble_specs() {
        let a = estimate(&s, &spec, 3).map_err(|e| format!("{}: {e}", spec.label()))?;
        let b = estimate(&t, &spec, 3).map_err(|e| format!("{}: {e}", spec.label()))?;
        if a.estimate.to_bits() != b.estimate.to_bits() {
            return Err(format!(
                "{}: {} before vs {} after scrambling",
                spec.label(),
                a.estimate,
                b.estimate
            ));
        }
    }
    Ok(format!(
        "{} handler/estimator pipelines unchanged bit for bit",
        scramble_specs().len()
    ))
}

/// Random feasible calibration problems; returns the worst residual.
pub fn calibration_feasibility(cases: usize, seed: u64) -> Check {
    let mut rng = stream(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(5..60);
        let k = rng.random_range(1..4);
        let g: Vec<f64> = (0..n * k).map(|_| 3.0 * std_normal(&mut rng)).collect();
        // Strict convex combination keeps the target in the hull interior.
        let mix: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
        let z: f64 = mix.iter().sum();
        let g_tilde: Vec<f64> = (0..k)
            .map(|j| (0..n).map(|i| mix[i] * g[i * k + j]).sum::<f64>() / z)
            .collect();
        let w = calibration_weights(&g, k, &g_tilde).map_err(|e| format!("case {case}: {e}"))?;
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(format!("case {case}: weights not a distribution (sum {sum})"));
        }
        for j in 0..k {
            let r = ((0..n).map(|i| w[i] * g[i * k + j]).sum::<f64>() - g_tilde[j]).abs();
            worst = worst.max(r);
        }
    }
    if worst < 1e-6 {
        Ok(format!("{cases} random problems, worst residual {worst:.2e}"))
    } else {
        Err(format!("worst residual {worst:.2e}"))
    }
}

//! Monte-Carlo grid execution.
//!
//! Seeds are derived hierarchically: master, then scenario (by name), then
//! replication, then sub-task. Results therefore do not depend on worker
//! scheduling. All methods of one replication share the same method seed,
//! so handlers that impute produce identical completed datasets whether or
//! not they are evaluated together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{EstimateStatus, StackedSample};
use crate::dgp::{simulate_with_pool, SimulatedData, SimulationConfig};
use crate::error::{Error, Result};
use crate::estimators::{bootstrap_ci, estimate, estimate_imputed, impute_for, Handler, MethodSpec};
use crate::io::{write_target_file, write_trial_file};
use crate::par;
use crate::rng::{derive, derive_named};

use super::config::GridConfig;

/// One data-generating scenario of the grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub config: SimulationConfig,
    pub pool_size: usize,
    pub ground_truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    NotConverged,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::NotConverged => "not-converged",
            CellStatus::Failed => "failed",
        }
    }
}

/// One (method, handler, engine) outcome inside a replication.
///
/// `estimate` is present only when `status` is `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub spec: MethodSpec,
    pub estimate: Option<f64>,
    pub status: CellStatus,
    pub message: Option<String>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub scenario: String,
    pub replication: usize,
    pub seed: u64,
    /// Excluded from determinism guarantees.
    pub wall_time_s: f64,
    pub cells: Vec<CellResult>,
}

/// Where optional per-replication artifacts go.
#[derive(Debug, Clone, Default)]
pub struct DumpOptions {
    pub dir: PathBuf,
    pub data: bool,
    pub imputations: bool,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<MethodSpec>,
    pub results: Vec<ReplicationResult>,
}

impl GridOutput {
    pub fn truths(&self) -> BTreeMap<String, f64> {
        self.scenarios.iter().map(|s| (s.id.clone(), s.ground_truth)).collect()
    }
}

pub fn build_scenarios(cfg: &GridConfig) -> Result<Vec<Scenario>> {
    cfg.scenarios()
        .into_iter()
        .map(|sc| {
            let config = cfg.dgp.simulation_config(sc.to_missingness());
            config.validate()?;
            let pool_size = config.resolved_pool_size()?;
            Ok(Scenario {
                id: sc.name,
                ground_truth: config.ground_truth(),
                config,
                pool_size,
            })
        })
        .collect()
}

pub fn scenario_seed(master: u64, scenario: &str) -> u64 {
    derive_named(master, &format!("scenario/{scenario}"))
}

pub fn replication_seed(master: u64, scenario: &str, replication: usize) -> u64 {
    derive(scenario_seed(master, scenario), replication as u64)
}

/// Runs every scenario × replication × method cell.
///
/// Failures inside a cell become flags; only setup errors (invalid
/// scenarios, unwritable dump directories) abort the grid.
pub fn run_grid(cfg: &GridConfig, reps: usize, master_seed: u64, dump: Option<&DumpOptions>) -> Result<GridOutput> {
    cfg.validate()?;
    let scenarios = build_scenarios(cfg)?;
    let methods = cfg.methods.expand();
    if let Some(d) = dump {
        std::fs::create_dir_all(&d.dir)?;
    }
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..reps).map(move |r| (s, r)))
        .collect();
    let results = par::map_slice(&jobs, |&(s, r)| {
        let sc = &scenarios[s];
        run_replication(
            sc,
            &methods,
            r,
            replication_seed(master_seed, &sc.id, r),
            cfg.run.bootstrap,
            dump,
        )
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GridOutput {
        scenarios,
        methods,
        results,
    })
}

/// Simulates one data set and evaluates every method on it.
pub fn run_replication(
    scenario: &Scenario,
    methods: &[MethodSpec],
    replication: usize,
    seed: u64,
    bootstrap: usize,
    dump: Option<&DumpOptions>,
) -> Result<ReplicationResult> {
    let started = Instant::now();
    let mut cfg = scenario.config.clone();
    cfg.seed = derive_named(seed, "data");
    let method_seed = derive_named(seed, "methods");
    let data = simulate_with_pool(&cfg, scenario.pool_size);
    let cells = match &data {
        Err(e) => methods.iter().map(|m| failed(m, e)).collect(),
        Ok(d) => {
            if let Some(opts) = dump.filter(|o| o.data) {
                dump_data(opts, &scenario.id, replication, d)?;
            }
            evaluate_methods(d, methods, method_seed, bootstrap, dump, &scenario.id, replication)?
        }
    };
    Ok(ReplicationResult {
        scenario: scenario.id.clone(),
        replication,
        seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        cells,
    })
}

fn failed(spec: &MethodSpec, e: &Error) -> CellResult {
    CellResult {
        spec: spec.clone(),
        estimate: None,
        status: CellStatus::Failed,
        message: Some(e.to_string()),
        ci_low: None,
        ci_high: None,
    }
}

fn evaluate_methods(
    d: &SimulatedData,
    methods: &[MethodSpec],
    seed: u64,
    bootstrap: usize,
    dump: Option<&DumpOptions>,
    scenario: &str,
    replication: usize,
) -> Result<Vec<CellResult>> {
    let observed = d.stacked()?;
    let full = d.stacked_full()?;
    // Completed datasets keyed by handler and MICE settings.
    let mut imputed: Vec<(MethodSpec, Result<Vec<StackedSample>>)> = Vec::new();
    let mut cells = Vec::with_capacity(methods.len());
    for spec in methods {
        // The `none` handler is the full-data reference: rows before amputation.
        let input = if spec.handler == Handler::None {
            &full
        } else {
            &observed
        };
        let report = if spec.handler.imputation_strategy().is_some() {
            let pos = imputed
                .iter()
                .position(|(s, _)| s.handler == spec.handler && s.mice == spec.mice);
            let pos = match pos {
                Some(p) => p,
                None => {
                    let sets = impute_for(input, spec, seed);
                    if let (Some(opts), Ok(sets)) = (dump.filter(|o| o.imputations), &sets) {
                        dump_imputations(opts, scenario, replication, spec.handler, sets)?;
                    }
                    imputed.push((spec.clone(), sets));
                    imputed.len() - 1
                }
            };
            match &imputed[pos].1 {
                Ok(sets) => estimate_imputed(input, sets, spec, seed),
                Err(e) => Err(Error::DegenerateSample(format!("imputation failed: {e}"))),
            }
        } else {
            estimate(input, spec, seed)
        };
        let mut cell = match report {
            Err(e) => failed(spec, &e),
            Ok(r) if r.status == EstimateStatus::NotConverged => CellResult {
                spec: spec.clone(),
                estimate: None,
                status: CellStatus::NotConverged,
                message: Some(r.notes.join("; ")),
                ci_low: None,
                ci_high: None,
            },
            Ok(r) => CellResult {
                spec: spec.clone(),
                estimate: Some(r.estimate),
                status: CellStatus::Ok,
                message: None,
                ci_low: None,
                ci_high: None,
            },
        };
        if let (Some(est), true) = (cell.estimate, bootstrap >= 2) {
            let bseed = derive_named(derive_named(seed, "bootstrap"), &spec.label());
            match bootstrap_ci(input, spec, bootstrap, bseed) {
                Ok(b) => {
                    let (lo, hi) = contain(b.low, b.high, est);
                    cell.ci_low = Some(lo);
                    cell.ci_high = Some(hi);
                }
                Err(e) => cell.message = Some(format!("bootstrap: {e}")),
            }
        }
        cells.push(cell);
    }
    Ok(cells)
}

/// Widens a percentile interval so it contains the point estimate.
pub fn contain(low: f64, high: f64, estimate: f64) -> (f64, f64) {
    (low.min(estimate), high.max(estimate))
}

fn rep_dir(opts: &DumpOptions, scenario: &str, replication: usize) -> Result<PathBuf> {
    let dir = opts.dir.join(scenario).join(format!("rep-{replication:04}"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dump_data(opts: &DumpOptions, scenario: &str, replication: usize, d: &SimulatedData) -> Result<()> {
    let dir = rep_dir(opts, scenario, replication)?;
    write_trial_file(&dir.join("trial.csv"), &d.trial)?;
    write_target_file(&dir.join("target.csv"), &d.target)?;
    write_trial_file(&dir.join("trial_full.csv"), &d.full_trial)?;
    write_target_file(&dir.join("target_full.csv"), &d.full_target)
}

fn dump_imputations(
    opts: &DumpOptions,
    scenario: &str,
    replication: usize,
    handler: Handler,
    sets: &[StackedSample],
) -> Result<()> {
    let dir = rep_dir(opts, scenario, replication)?.join(handler.as_str());
    std::fs::create_dir_all(&dir)?;
    for (k, s) in sets.iter().enumerate() {
        let (t, o) = s.split();
        write_trial_file(&dir.join(format!("trial-{k:03}.csv")), &t)?;
        write_target_file(&dir.join(format!("target-{k:03}.csv")), &o)?;
    }
    Ok(())
}

/// Convenience for callers that only need the results directory layout.
pub fn dump_root(out: &Path) -> PathBuf {
    out.join("dumps")
}

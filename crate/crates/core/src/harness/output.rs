//! CSV and JSON artifacts. Floats carry 17 significant digits; absent values
//! are empty cells.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::EstimateReport;
use crate::error::{Error, Result};
use crate::estimators::{Handler, MethodSpec};
use crate::io::{fmt_f64, fmt_opt};

use super::grid::{CellResult, CellStatus, ReplicationResult, Scenario};
use super::overlap::OverlapReport;
use super::summary::BiasSummary;

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SCENARIOS_FILE: &str = "scenarios.csv";
pub const BIAS_SUMMARY_FILE: &str = "bias_summary.csv";
pub const PLOT_FILE: &str = "bias_plot.csv";
pub const ESTIMATE_FILE: &str = "estimate.json";

const REPLICATION_HEADER: [&str; 12] = [
    "scenario",
    "replication",
    "seed",
    "estimator",
    "handler",
    "engine",
    "status",
    "estimate",
    "ci_low",
    "ci_high",
    "message",
    "wall_time_s",
];

const SUMMARY_HEADER: [&str; 13] = [
    "scenario",
    "estimator",
    "handler",
    "engine",
    "bias",
    "mc_se",
    "ci_low",
    "ci_high",
    "n_converged",
    "n_reps",
    "mean_abs_error",
    "coverage",
    "n_intervals",
];

/// Panel label used in figures; `none` is the full-data reference.
pub fn handler_label(h: Handler) -> &'static str {
    match h {
        Handler::None => "Full",
        Handler::Cc => "CC",
        Handler::Em => "EM",
        Handler::Mia => "MIA",
        Handler::WiMi => "WI-MI",
        Handler::AhMi => "AH-MI",
        Handler::FeMi => "FE-MI",
    }
}

pub fn write_replications(path: &Path, results: &[ReplicationResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPLICATION_HEADER)?;
    for r in results {
        for c in &r.cells {
            w.write_record([
                r.scenario.clone(),
                r.replication.to_string(),
                r.seed.to_string(),
                c.spec.estimator.to_string(),
                c.spec.handler.to_string(),
                c.spec.engine.to_string(),
                c.status.as_str().to_string(),
                fmt_opt(c.estimate),
                fmt_opt(c.ci_low),
                fmt_opt(c.ci_high),
                c.message.clone().unwrap_or_default(),
                fmt_f64(r.wall_time_s),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn opt_cell(raw: &str, what: &str) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("{what}: cannot parse `{raw}`")))
}

/// Reads a replications table back; rows of one (scenario, replication)
/// must be contiguous, as written.
pub fn read_replications(path: &Path) -> Result<Vec<ReplicationResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != REPLICATION_HEADER {
        return Err(Error::Schema(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut out: Vec<ReplicationResult> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = format!("{} line {}", path.display(), line + 2);
        let parse_usize = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| Error::Parse(format!("{ctx}: bad integer `{}`", &rec[i])))
        };
        let replication = parse_usize(1)?;
        let seed: u64 = rec[2].parse().map_err(|_| Error::Parse(format!("{ctx}: bad seed")))?;
        let spec = MethodSpec::new(rec[3].parse()?, rec[5].parse()?, rec[4].parse()?);
        let status = match &rec[6] {
            "ok" => CellStatus::Ok,
            "not-converged" => CellStatus::NotConverged,
            "failed" => CellStatus::Failed,
            other => return Err(Error::Parse(format!("{ctx}: unknown status `{other}`"))),
        };
        let cell = CellResult {
            spec,
            estimate: opt_cell(&rec[7], &ctx)?,
            status,
            message: (!rec[10].is_empty()).then(|| rec[10].to_string()),
            ci_low: opt_cell(&rec[8], &ctx)?,
            ci_high: opt_cell(&rec[9], &ctx)?,
        };
        let wall = opt_cell(&rec[11], &ctx)?.unwrap_or(0.0);
        match out.last_mut() {
            Some(last) if last.scenario == rec[0] && last.replication == replication => last.cells.push(cell),
            _ => out.push(ReplicationResult {
                scenario: rec[0].to_string(),
                replication,
                seed,
                wall_time_s: wall,
                cells: vec![cell],
            }),
        }
    }
    Ok(out)
}

pub fn write_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "selection_model",
        "outcome_model",
        "assumption",
        "trial_size",
        "target_size",
        "pool_size",
        "ground_truth",
        "missingness",
    ])?;
    for s in scenarios {
        let c = &s.config;
        let missingness = serde_json::to_string(&c.missingness).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_record([
            s.id.clone(),
            c.selection_model.as_str().into(),
            c.outcome_model.as_str().into(),
            c.assumption.as_str().into(),
            c.trial_size.to_string(),
            c.target_size.to_string(),
            s.pool_size.to_string(),
            fmt_f64(s.ground_truth),
            missingness,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scenario id to ground truth, from a scenarios table.
pub fn read_truths(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: no `{name}` column", path.display())))
    };
    let (si, ti) = (col("scenario")?, col("ground_truth")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: f64 = rec[ti]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad ground truth `{}`", path.display(), &rec[ti])))?;
        out.insert(rec[si].to_string(), t);
    }
    Ok(out)
}

pub fn write_bias_summary(path: &Path, rows: &[BiasSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record([
            s.scenario.clone(),
            s.estimator.to_string(),
            s.handler.to_string(),
            s.engine.to_string(),
            fmt_opt(s.bias),
            fmt_opt(s.mc_se),
            fmt_opt(s.ci_low),
            fmt_opt(s.ci_high),
            s.n_converged.to_string(),
            s.n_reps.to_string(),
            fmt_opt(s.mean_abs_error),
            fmt_opt(s.coverage),
            s.n_intervals.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format, one row per panel point. Cells without converged
/// replications are marked omitted rather than dropped.
pub fn write_plot_data(path: &Path, rows: &[BiasSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "panel",
        "estimator",
        "method",
        "engine",
        "bias",
        "ci_low",
        "ci_high",
        "omitted",
    ])?;
    for s in rows {
        w.write_record([
            s.scenario.clone(),
            s.estimator.as_str().to_uppercase(),
            handler_label(s.handler).to_string(),
            s.engine.to_string(),
            fmt_opt(s.bias),
            fmt_opt(s.ci_low),
            fmt_opt(s.ci_high),
            (s.n_converged == 0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn json_number(x: f64) -> Result<serde_json::Value> {
    if !x.is_finite() {
        return Ok(serde_json::Value::Null);
    }
    // Keeps the 17-digit rendering instead of the shortest round-trip form.
    serde_json::from_str(&fmt_f64(x)).map_err(|e| Error::Parse(e.to_string()))
}

fn json_opt(x: Option<f64>) -> Result<serde_json::Value> {
    x.map(json_number).unwrap_or(Ok(serde_json::Value::Null))
}

pub fn estimate_json(r: &EstimateReport) -> Result<serde_json::Value> {
    let mut diagnostics = serde_json::Map::new();
    for (k, v) in &r.diagnostics {
        diagnostics.insert(k.clone(), json_number(*v)?);
    }
    Ok(serde_json::json!({
        "estimate": json_number(r.estimate)?,
        "variance": json_opt(r.variance)?,
        "ci_low": json_opt(r.ci_low)?,
        "ci_high": json_opt(r.ci_high)?,
        "method": r.method,
        "missing_handler": r.missing_handler,
        "engine": r.engine,
        "n_trial": r.n_trial,
        "n_target": r.n_target,
        "status": r.status,
        "diagnostics": diagnostics,
        "notes": r.notes,
    }))
}

pub fn write_estimate_json(path: &Path, r: &EstimateReport) -> Result<()> {
    let text = serde_json::to_string_pretty(&estimate_json(r)?).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_overlap(dir: &Path, o: &OverlapReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
    w.write_record(["source", "score"])?;
    for (s, &t) in o.scores.iter().zip(&o.in_trial) {
        w.write_record([if t { "trial" } else { "target" }, &fmt_f64(*s)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
    w.write_record(["bin_low", "bin_high", "trial_share", "target_share"])?;
    for b in &o.histogram {
        w.write_record([fmt_f64(b.low), fmt_f64(b.high), fmt_f64(b.trial), fmt_f64(b.target)])?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "overlap_coefficient": json_number(o.overlap_coefficient)?,
        "bins": o.histogram.len(),
        "n_trial": o.in_trial.iter().filter(|&&t| t).count(),
        "n_target": o.in_trial.iter().filter(|&&t| !t).count(),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("overlap.json"), text + "\n")?;
    Ok(())
}

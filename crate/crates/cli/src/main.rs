use std::path::PathBuf;
use std::process::ExitCode;

use ategen::data::stack;
use ategen::estimators::{bootstrap_ci, estimate, Engine, Estimator, Handler, MethodSpec, Moments};
use ategen::harness::grid::{contain, dump_root};
use ategen::harness::output::{write_estimate_json, write_overlap};
use ategen::harness::{self, overlap_diagnostics, preset, run_grid, DumpOptions, GridConfig};
use ategen::io::{read_target_file, read_trial_file, DEFAULT_OUTCOME_COLUMN, DEFAULT_TREATMENT_COLUMN};
use ategen::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Generalize a trial's average treatment effect to a target population
/// with incomplete covariates.
#[derive(Parser)]
#[command(name = "ategen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write replication and bias tables.
    Simulate(SimulateArgs),
    /// Estimate the target ATE from trial and target CSV files.
    Estimate(EstimateArgs),
    /// Fit the membership model and write score overlap diagnostics.
    Diagnose(DiagnoseArgs),
    /// Rebuild bias summaries from an earlier simulate output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML grid configuration.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in grid.
    #[arg(long, value_parser = ["fig2", "fig3", "fig4", "fig9", "fig10"])]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `[run] reps`.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dump_data: bool,
    #[arg(long)]
    dump_imputations: bool,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    trial: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = DEFAULT_TREATMENT_COLUMN)]
    treatment_col: String,
    #[arg(long, default_value = DEFAULT_OUTCOME_COLUMN)]
    outcome_col: String,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// dm, ipsw, co, aipsw or cw.
    #[arg(long)]
    method: Estimator,
    /// none, cc, wi-mi, ah-mi, fe-mi, em or mia.
    #[arg(long)]
    handler: Handler,
    /// parametric or forest; defaults to forest for mia.
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long, default_value_t = 10)]
    m_imputations: usize,
    /// Stratified bootstrap resamples for the interval; 0 disables.
    #[arg(long, default_value_t = 100)]
    bootstrap: usize,
    /// Constant trial treatment propensity.
    #[arg(long, default_value_t = 0.5)]
    propensity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-arm normalized sampling weights.
    #[arg(long)]
    stabilized: bool,
    /// Calibration moments: first or first-second.
    #[arg(long, default_value = "first")]
    moments: Moments,
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    engine: Engine,
    #[arg(long)]
    handler: Handler,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn default_engine(handler: Handler) -> Engine {
    if handler == Handler::Mia {
        Engine::Forest
    } else {
        Engine::Parametric
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => GridConfig::from_file(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
    };
    if let Some(r) = a.reps {
        cfg.run.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    cfg.run.dump_data |= a.dump_data;
    cfg.run.dump_imputations |= a.dump_imputations;
    cfg.validate()?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml_string()?)?;
    let dump = (cfg.run.dump_data || cfg.run.dump_imputations).then(|| DumpOptions {
        dir: dump_root(&a.out),
        data: cfg.run.dump_data,
        imputations: cfg.run.dump_imputations,
    });
    let g = run_grid(&cfg, cfg.run.reps, cfg.run.seed, dump.as_ref())?;
    let summary = harness::write_grid_outputs(&a.out, &g)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(rows: &[harness::BiasSummary]) {
    println!(
        "{:<12} {:<26} {:>12} {:>10} {:>9}",
        "scenario", "method", "bias", "mc_se", "converged"
    );
    for s in rows {
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<12} {:<26} {:>12} {:>10} {:>5}/{}",
            s.scenario,
            s.label(),
            fmt(s.bias),
            fmt(s.mc_se),
            s.n_converged,
            s.n_reps
        );
    }
}

fn load(d: &DataArgs) -> Result<ategen::data::StackedSample> {
    let trial = read_trial_file(&d.trial, &d.treatment_col, &d.outcome_col)?;
    let target = read_target_file(&d.target)?;
    stack(&trial, &target)
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let s = load(&a.data)?;
    let mut spec = MethodSpec::new(a.method, a.engine.unwrap_or(default_engine(a.handler)), a.handler);
    spec.mice.imputations = a.m_imputations;
    spec.stabilized = a.stabilized;
    spec.moments = a.moments;
    spec.propensity = a.propensity;
    if let Some(t) = a.trees {
        spec.forest.num_trees = t;
    }
    let mut report = estimate(&s, &spec, a.seed)?;
    if a.bootstrap > 0 {
        let b = bootstrap_ci(&s, &spec, a.bootstrap, ategen::rng::derive_named(a.seed, "bootstrap"))?;
        let (lo, hi) = contain(b.low, b.high, report.estimate);
        report.set_interval(b.variance, lo, hi);
        report
            .diagnostics
            .insert("bootstrap_resamples".into(), a.bootstrap as f64);
        report
            .diagnostics
            .insert("bootstrap_failures".into(), b.failures as f64);
    }
    match &a.out {
        Some(path) => write_estimate_json(path, &report),
        None => {
            println!("{:#}", ategen::harness::output::estimate_json(&report)?);
            Ok(())
        }
    }
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let s = load(&a.data)?;
    let o = overlap_diagnostics(&s, a.engine, a.handler, a.seed)?;
    write_overlap(&a.out, &o)?;
    println!("overlap coefficient {:.4}", o.overlap_coefficient);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let summary = harness::report(&a.input, &a.out)?;
    print_summary(&summary);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Spec(_) | Error::Parse(_) | Error::Schema(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

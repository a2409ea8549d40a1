//! Simulation grids, bias summaries, bootstrap intervals and overlap
//! diagnostics.

pub mod config;
pub mod grid;
pub mod output;
pub mod overlap;
pub mod presets;
pub mod summary;

use std::path::Path;

use crate::error::Result;

pub use crate::estimators::{bootstrap_ci, BootstrapSummary};
pub use config::{DgpSection, GridConfig, MethodsSection, MissingnessSection, RunSection, ScenarioMissingness};
pub use grid::{
    run_grid, run_replication, CellResult, CellStatus, DumpOptions, GridOutput, ReplicationResult, Scenario,
};
pub use overlap::{overlap_diagnostics, OverlapReport};
pub use presets::preset;
pub use summary::{summarize_bias, BiasSummary};

/// Writes the standard result tables of a grid run into `out`.
pub fn write_grid_outputs(out: &Path, g: &GridOutput) -> Result<Vec<BiasSummary>> {
    std::fs::create_dir_all(out)?;
    output::write_replications(&out.join(output::REPLICATIONS_FILE), &g.results)?;
    output::write_scenarios(&out.join(output::SCENARIOS_FILE), &g.scenarios)?;
    let summary = summarize_bias(&g.results, &g.truths());
    output::write_bias_summary(&out.join(output::BIAS_SUMMARY_FILE), &summary)?;
    output::write_plot_data(&out.join(output::PLOT_FILE), &summary)?;
    Ok(summary)
}

/// Rebuilds the summary tables from a previous run directory.
pub fn report(input: &Path, out: &Path) -> Result<Vec<BiasSummary>> {
    let results = output::read_replications(&input.join(output::REPLICATIONS_FILE))?;
    let truths = output::read_truths(&input.join(output::SCENARIOS_FILE))?;
    let summary = summarize_bias(&results, &truths);
    std::fs::create_dir_all(out)?;
    output::write_bias_summary(&out.join(output::BIAS_SUMMARY_FILE), &summary)?;
    output::write_plot_data(&out.join(output::PLOT_FILE), &summary)?;
    Ok(summary)
}

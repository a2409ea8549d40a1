//! Built-in grids mirroring the published simulation panels.

use crate::amputation::Mechanism;
use crate::dgp::SelectionModel;
use crate::error::{Error, Result};
use crate::estimators::{Engine, Estimator, Handler};

use super::config::{DgpSection, GridConfig, MethodsSection, MissingnessSection, RunSection, ScenarioMissingness};

pub const PRESETS: &[&str] = &["fig2", "fig3", "fig4", "fig9", "fig10"];

/// Share of hidden entries per incomplete covariate.
pub const DEFAULT_PROPORTION: f64 = 0.2;

const ESTIMATORS: &[Estimator] = &[Estimator::Ipsw, Estimator::Co, Estimator::Aipsw, Estimator::Cw];

/// Full data, complete cases, both direct handlers and the three imputation strategies.
pub const ALL_HANDLERS: &[Handler] = &[
    Handler::None,
    Handler::Cc,
    Handler::Em,
    Handler::Mia,
    Handler::WiMi,
    Handler::FeMi,
    Handler::AhMi,
];

fn mechanisms() -> Vec<ScenarioMissingness> {
    [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar]
        .into_iter()
        .map(|m| ScenarioMissingness::shared(m.as_str(), m, DEFAULT_PROPORTION))
        .collect()
}

fn grid(dgp: DgpSection, scenarios: Vec<ScenarioMissingness>, methods: MethodsSection) -> GridConfig {
    GridConfig {
        dgp,
        missingness: MissingnessSection { scenarios },
        methods,
        run: RunSection::default(),
    }
}

pub fn preset(name: &str) -> Result<GridConfig> {
    let cfg = match name {
        "fig2" => grid(
            DgpSection::linear(SelectionModel::StdLinear),
            mechanisms(),
            MethodsSection::new(ESTIMATORS, ALL_HANDLERS),
        ),
        "fig3" => grid(
            DgpSection::linear(SelectionModel::CisLinear),
            mechanisms(),
            MethodsSection::new(ESTIMATORS, ALL_HANDLERS),
        ),
        "fig4" => grid(
            DgpSection::linear(SelectionModel::StdLinear),
            vec![
                ScenarioMissingness::per_source("case-a", Mechanism::Mcar, 0.10, 0.50),
                ScenarioMissingness::per_source("case-b", Mechanism::Mcar, 0.05, 0.22),
            ],
            MethodsSection::new(ESTIMATORS, ALL_HANDLERS),
        ),
        "fig9" | "fig10" => {
            let selection = if name == "fig9" {
                SelectionModel::StdNonlinear
            } else {
                SelectionModel::CisNonlinear
            };
            let mut methods = MethodsSection::new(ESTIMATORS, ALL_HANDLERS);
            methods.engines = Some(vec![Engine::Parametric, Engine::Forest]);
            let mut dgp = DgpSection::linear(selection);
            dgp.trial_size = 2000;
            dgp.target_size = 20_000;
            grid(dgp, mechanisms(), methods)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for p in PRESETS {
            preset(p).unwrap();
        }
        assert!(preset("fig5").is_err());
    }

    #[test]
    fn fig2_panel_structure() {
        let cfg = preset("fig2").unwrap();
        assert_eq!(cfg.scenarios().len(), 3);
        let specs = cfg.methods.expand();
        // CW is unavailable for the two direct handlers.
        assert_eq!(specs.len(), 7 * 4 - 2);
        let handlers: std::collections::BTreeSet<_> = specs.iter().map(|s| s.handler).collect();
        assert_eq!(handlers.len(), 7);
    }

    #[test]
    fn fig4_proportions() {
        let cfg = preset("fig4").unwrap();
        let sc = cfg.scenarios();
        assert_eq!(
            (sc[0].trial_proportion, sc[0].target_proportion),
            (Some(0.10), Some(0.50))
        );
        assert_eq!(
            (sc[1].trial_proportion, sc[1].target_proportion),
            (Some(0.05), Some(0.22))
        );
    }
}

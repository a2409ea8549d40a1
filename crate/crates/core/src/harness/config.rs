//! TOML grid configuration with `[dgp]`, `[missingness]`, `[methods]` and
//! `[run]` sections. Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amputation::{AmputationSpec, Mechanism};
use crate::dgp::{Assumption, Missingness, OutcomeModel, SelectionModel, SimulationConfig};
use crate::error::{Error, Result};
use crate::estimators::{Engine, Estimator, Handler, MethodSpec, Moments};
use crate::imputation::MiceParams;
use crate::nuisance::{ForestParams, DEFAULT_MC_DRAWS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dgp: DgpSection,
    #[serde(default)]
    pub missingness: MissingnessSection,
    pub methods: MethodsSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    #[serde(default = "default_trial_size")]
    pub trial_size: usize,
    #[serde(default)]
    pub pool_size: Option<usize>,
    #[serde(default = "default_target_size")]
    pub target_size: usize,
    #[serde(default = "default_dim")]
    pub covariate_dim: usize,
    #[serde(default = "default_mean")]
    pub covariate_mean: f64,
    #[serde(default = "default_correlation")]
    pub correlation: f64,
    pub selection_model: SelectionModel,
    /// Defaults to the outcome model of the same family as the selection model.
    #[serde(default)]
    pub outcome_model: Option<OutcomeModel>,
    /// Defaults to the assumption implied by the selection model.
    #[serde(default)]
    pub assumption: Option<Assumption>,
}

fn default_trial_size() -> usize {
    1000
}
fn default_target_size() -> usize {
    10_000
}
fn default_dim() -> usize {
    4
}
fn default_mean() -> f64 {
    1.0
}
fn default_correlation() -> f64 {
    0.6
}

/// One named missingness scenario.
///
/// Without a mechanism the scenario is complete. `trial_proportion` or
/// `target_proportion` switch to per-source amputation, each defaulting to
/// `proportion`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMissingness {
    pub name: String,
    #[serde(default)]
    pub mechanism: Option<Mechanism>,
    #[serde(default)]
    pub proportion: f64,
    #[serde(default)]
    pub trial_proportion: Option<f64>,
    #[serde(default)]
    pub target_proportion: Option<f64>,
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
    #[serde(default)]
    pub mar_driver_columns: Option<Vec<usize>>,
    #[serde(default)]
    pub mar_slopes: Option<Vec<f64>>,
}

impl ScenarioMissingness {
    pub fn complete(name: &str) -> Self {
        Self {
            name: name.into(),
            mechanism: None,
            proportion: 0.0,
            trial_proportion: None,
            target_proportion: None,
            columns: None,
            mar_driver_columns: None,
            mar_slopes: None,
        }
    }

    pub fn shared(name: &str, mechanism: Mechanism, proportion: f64) -> Self {
        Self {
            mechanism: Some(mechanism),
            proportion,
            ..Self::complete(name)
        }
    }

    pub fn per_source(name: &str, mechanism: Mechanism, trial: f64, target: f64) -> Self {
        Self {
            trial_proportion: Some(trial),
            target_proportion: Some(target),
            ..Self::shared(name, mechanism, 0.0)
        }
    }

    pub fn to_missingness(&self) -> Missingness {
        let Some(mechanism) = self.mechanism else {
            return Missingness::None;
        };
        let spec = |proportion: f64| AmputationSpec {
            mechanism,
            columns: self.columns.clone(),
            proportion,
            mar_driver_columns: self.mar_driver_columns.clone(),
            mar_slopes: self.mar_slopes.clone(),
        };
        if self.trial_proportion.is_none() && self.target_proportion.is_none() {
            return Missingness::Shared {
                spec: spec(self.proportion),
            };
        }
        Missingness::PerSource {
            trial: spec(self.trial_proportion.unwrap_or(self.proportion)),
            target: spec(self.target_proportion.unwrap_or(self.proportion)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSection {
    /// Empty means a single complete-data scenario.
    #[serde(default)]
    pub scenarios: Vec<ScenarioMissingness>,
}

/// Cartesian method grid. Invalid estimator/handler/engine combinations
/// are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsSection {
    pub estimators: Vec<Estimator>,
    pub handlers: Vec<Handler>,
    /// `None` picks the forest engine for `mia` and the parametric engine
    /// for every other handler.
    #[serde(default)]
    pub engines: Option<Vec<Engine>>,
    #[serde(default)]
    pub stabilized: bool,
    #[serde(default = "default_moments")]
    pub moments: Moments,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub mice: MiceParams,
    #[serde(default = "default_draws")]
    pub em_draws: usize,
    #[serde(default)]
    pub pooling_bootstrap: usize,
    #[serde(default = "default_propensity")]
    pub propensity: f64,
}

fn default_propensity() -> f64 {
    0.5
}
fn default_moments() -> Moments {
    Moments::First
}
fn default_draws() -> usize {
    DEFAULT_MC_DRAWS
}

impl MethodsSection {
    pub fn new(estimators: &[Estimator], handlers: &[Handler]) -> Self {
        Self {
            estimators: estimators.to_vec(),
            handlers: handlers.to_vec(),
            engines: None,
            stabilized: false,
            moments: Moments::First,
            forest: ForestParams::default(),
            mice: MiceParams::default(),
            em_draws: DEFAULT_MC_DRAWS,
            pooling_bootstrap: 0,
            propensity: default_propensity(),
        }
    }

    /// Handler-major expansion in configuration order.
    pub fn expand(&self) -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for &handler in &self.handlers {
            let engines = match &self.engines {
                Some(e) => e.clone(),
                None if handler == Handler::Mia => vec![Engine::Forest],
                None => vec![Engine::Parametric],
            };
            for &engine in &engines {
                for &estimator in &self.estimators {
                    let spec = MethodSpec {
                        estimator,
                        engine,
                        handler,
                        stabilized: self.stabilized,
                        moments: self.moments,
                        forest: self.forest.clone(),
                        mice: self.mice,
                        em_draws: self.em_draws,
                        pooling_bootstrap: self.pooling_bootstrap,
                        propensity: self.propensity,
                    };
                    match spec.validate() {
                        Ok(()) => out.push(spec),
                        Err(e) => log::debug!("skipping {}: {e}", spec.label()),
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Bootstrap resamples per cell; 0 disables intervals and coverage.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default)]
    pub dump_data: bool,
    #[serde(default)]
    pub dump_imputations: bool,
}

fn default_reps() -> usize {
    100
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            reps: default_reps(),
            seed: 0,
            bootstrap: 0,
            dump_data: false,
            dump_imputations: false,
        }
    }
}

impl DgpSection {
    pub fn linear(selection_model: SelectionModel) -> Self {
        Self {
            trial_size: default_trial_size(),
            pool_size: None,
            target_size: default_target_size(),
            covariate_dim: default_dim(),
            covariate_mean: default_mean(),
            correlation: default_correlation(),
            selection_model,
            outcome_model: None,
            assumption: None,
        }
    }

    /// Simulation config for one missingness scenario; the seed is set per
    /// replication.
    pub fn simulation_config(&self, missingness: Missingness) -> SimulationConfig {
        let nonlinear = matches!(
            self.selection_model,
            SelectionModel::StdNonlinear | SelectionModel::CisNonlinear
        );
        SimulationConfig {
            trial_size: self.trial_size,
            pool_size: self.pool_size,
            target_size: self.target_size,
            covariate_dim: self.covariate_dim,
            covariate_mean: self.covariate_mean,
            correlation: self.correlation,
            selection_model: self.selection_model,
            outcome_model: self.outcome_model.unwrap_or(if nonlinear {
                OutcomeModel::Nonlinear
            } else {
                OutcomeModel::Linear
            }),
            assumption: self.assumption.unwrap_or(if self.selection_model.is_cis() {
                Assumption::Cis
            } else {
                Assumption::Standard
            }),
            missingness,
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scenarios(&self) -> Vec<ScenarioMissingness> {
        if self.missingness.scenarios.is_empty() {
            vec![ScenarioMissingness::complete("complete")]
        } else {
            self.missingness.scenarios.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for sc in self.scenarios() {
            if !names.insert(sc.name.clone()) {
                return Err(Error::Config(format!("duplicate missingness scenario `{}`", sc.name)));
            }
            self.dgp.simulation_config(sc.to_missingness()).validate()?;
        }
        if self.methods.expand().is_empty() {
            return Err(Error::Config(
                "the method grid has no valid estimator/handler/engine combination".into(),
            ));
        }
        if self.run.bootstrap == 1 {
            return Err(Error::Config(
                "bootstrap needs at least 2 resamples (or 0 to disable)".into(),
            ));
        }
        Ok(())
    }
}

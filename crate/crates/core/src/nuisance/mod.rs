//! Nuisance regressions: complete-data GLMs, EM fits on incomplete
//! covariates and MIA random forests.

pub mod em_glm;
pub mod forest;
pub mod glm;
pub mod mvn;

pub use em_glm::{fit_em_glm, predict_em, EmGlmModel, DEFAULT_MC_DRAWS};
pub use forest::{
    best_mia_split, fit_mia_forest, fit_mia_forest_oob, forest_predict, goes_left, ForestParams, ForestTask, MiaForest,
    MiaSplit, SplitType,
};
pub use glm::{fit_glm, fit_weighted_glm, Design, Family, GlmModel};
pub use mvn::{fit_mvn_em, MvnModel};

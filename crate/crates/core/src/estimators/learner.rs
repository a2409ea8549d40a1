//! Uniform fit/predict interface over the three nuisance engines.

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::nuisance::{
    fit_em_glm, fit_glm, fit_mia_forest_oob, Design, EmGlmModel, Family, ForestParams, ForestTask, GlmModel, MiaForest,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    /// GLM on complete covariates.
    Glm,
    /// GLM fitted by EM on incomplete Gaussian covariates.
    EmGlm { draws: usize },
    /// MIA forest; consumes masks directly.
    Forest(ForestParams),
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Glm(GlmModel),
    Em(EmGlmModel),
    Forest(MiaForest),
}

/// A fitted learner with predictions for its own training rows.
///
/// Forest training predictions are out-of-bag.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Fitted,
    pub training: Vec<f64>,
    pub converged: bool,
}

fn dense(x: &MaskedMatrix) -> Result<Vec<f64>> {
    if !x.is_complete() {
        return Err(Error::Contract(format!(
            "a GLM needs complete covariates but {} entries are missing",
            x.missing_count()
        )));
    }
    Ok((0..x.nrows()).flat_map(|i| x.row_raw(i).iter().copied()).collect())
}

impl Learner {
    pub fn fit(&self, x: &MaskedMatrix, y: &[f64], task: Task, seed: u64) -> Result<Fit> {
        let family = match task {
            Task::Regression => Family::Linear,
            Task::Classification => Family::Logistic,
        };
        match self {
            Learner::Glm => {
                let values = dense(x)?;
                let glm = fit_glm(Design::named(&values, x.ncols(), x.names()), y, family)?;
                let training = (0..x.nrows()).map(|i| glm.predict(x.row_raw(i))).collect();
                // Separation still yields usable clipped scores; only report it.
                let converged = glm.converged || glm.separation;
                Ok(Fit {
                    model: Fitted::Glm(glm),
                    training,
                    converged,
                })
            }
            Learner::EmGlm { draws } => {
                let m = fit_em_glm(x, y, family, *draws, seed)?;
                let training = m.predict_rows(x)?;
                let converged = m.converged;
                Ok(Fit {
                    model: Fitted::Em(m),
                    training,
                    converged,
                })
            }
            Learner::Forest(params) => {
                let forest_task = match task {
                    Task::Regression => ForestTask::Regression,
                    Task::Classification => ForestTask::Probability,
                };
                let (f, oob) = fit_mia_forest_oob(x, y, params, forest_task, seed)?;
                Ok(Fit {
                    model: Fitted::Forest(f),
                    training: oob,
                    converged: true,
                })
            }
        }
    }
}

impl Fitted {
    pub fn predict(&self, x: &MaskedMatrix) -> Result<Vec<f64>> {
        match self {
            Fitted::Glm(g) => {
                dense(x)?;
                Ok((0..x.nrows()).map(|i| g.predict(x.row_raw(i))).collect())
            }
            Fitted::Em(m) => m.predict_rows(x),
            Fitted::Forest(f) => Ok(f.predict_rows(x)),
        }
    }
}

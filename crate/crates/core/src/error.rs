use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("unsupported missingness proportion {proportion}: {reason}")]
    UnsupportedProportion { proportion: f64, reason: String },

    #[error("rank-deficient design: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),

    #[error("insufficient observations in column `{column}`: {observed} observed, {required} required")]
    InsufficientObservations {
        column: String,
        observed: usize,
        required: usize,
    },

    #[error("calibration target is infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Estimation of average treatment effects generalized from a randomized
//! trial to a target population when covariates are partially missing.

pub mod amputation;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod imputation;
pub mod io;
pub mod linalg;
pub mod nuisance;
pub mod par;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

//! EAGLE: a per-parameter secant-curvature update rule with an adaptive
//! switch to Adam, plus the small training stack needed to benchmark it.
//!
//! The crate is organized as:
//! - [`optim`]: the update rules and the switching mechanism
//! - [`net`]: a minimal fully connected network with manual backprop
//! - [`data`]: embedded Iris/Wine datasets, splits, analytic test functions
//! - [`bench`]: multi-seed experiment harness and CSV reporting
//! - [`landscape`]: one-parameter loss sweeps around a trained reference

pub mod bench;
pub mod cli;
pub mod data;
pub mod landscape;
pub mod net;
pub mod optim;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EagleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EagleError>;

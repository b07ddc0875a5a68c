use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A Langevin chain left the finite region or crossed the divergence radius.
    #[error("chain diverged at step {step} (eta = {eta:e})")]
    Divergence { step: usize, eta: f64 },

    #[error("non-finite log density at the current state: {0}")]
    NonFiniteDensity(String),

    #[error("non-finite log joint at coordinate {coordinate} ({side} side of the difference)")]
    GradientCheck { coordinate: usize, side: &'static str },

    #[error("sufficient statistics became non-finite at SA iteration {iteration}")]
    NonFiniteStats { iteration: usize },

    #[error("model does not provide {0}")]
    Capability(&'static str),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter `{name}` violates its constraint: {reason}")]
    Constraint { name: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: row {row}, column `{column}`: {reason}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("all weights are -inf; the likelihood is zero everywhere the sampler reached")]
    DegenerateWeights,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

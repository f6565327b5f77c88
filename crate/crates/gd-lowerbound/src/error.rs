//! Error type shared by every module.

use thiserror::Error;

/// Failures raised by constructions, oracles, certificates and experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("code construction failed after {rounds} rounds (d={d}, target size {target})")]
    ConstructionFailed { d: usize, target: usize, rounds: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("returned vector is not a subgradient at step {step}: {reason}")]
    NotASubgradient { step: usize, reason: String },

    #[error("oracle failure at step {step}: {reason}")]
    OracleFailure { step: usize, reason: String },

    #[error("iteration {t} exceeds the terminal time {terminal}")]
    OutOfPhase { t: usize, terminal: usize },

    #[error("triplets {i} and {j} violate the interpolation inequality (slack {slack})")]
    NotInterpolable { i: usize, j: usize, slack: f64 },

    #[error("candidate search exhausted after {0} candidates")]
    Exhausted(usize),

    #[error("enumeration of {required} items exceeds the budget {budget}")]
    BudgetExceeded { required: usize, budget: usize },

    #[error("replayed trajectory diverged from the nominal one at step {0}")]
    TrajectoryDiverged(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

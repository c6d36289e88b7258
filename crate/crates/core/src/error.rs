use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid state sequence: {0}")]
    InvalidSequence(String),

    #[error("transition matrix {index} is not row-stochastic: {detail}")]
    InvalidTransitionMatrix { index: usize, detail: String },

    #[error("grid spacing is not uniform (relative deviation {deviation:.3e})")]
    NotRegularGrid { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },

    #[error("Kronecker factor {factor} is singular")]
    SingularFactor { factor: usize },

    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("matrix not positive definite after jitter escalation (last jitter {jitter:.3e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("optimization failed at iteration {iteration}: {reason}")]
    OptimizationFailed {
        iteration: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("negative predictive variance {0:.3e}")]
    NegativeVariance(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

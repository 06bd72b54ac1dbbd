//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Timestep outside the schedule's valid range.
    #[error("timestep {t} outside schedule range 1..={t_max}")]
    ScheduleBounds { t: usize, t_max: usize },

    /// A vector or matrix had the wrong dimensions for the operation.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    /// Bad argument value (empty batch, non-positive rate, weights off by
    /// more than tolerance, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Invalid run or guidance configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric quantity that must be finite was not.
    #[error("non-finite value in {context}")]
    NumericFailure { context: String },

    /// Training loss became non-finite at the given step.
    #[error("training diverged at step {step}")]
    TrainingFailure { step: usize },

    /// An injected function violated a stated contract (e.g. an asymmetric
    /// similarity function).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Weight deltas were identically zero, so no direction can be recovered.
    #[error("degenerate weight delta: {0}")]
    DegenerateDelta(String),

    /// Clustering cannot produce the requested number of clusters.
    #[error("infeasible clustering: {n} samples cannot yield {n_target} clusters")]
    InfeasibleClustering { n: usize, n_target: usize },

    /// Operation defined only for a restricted family of distributions.
    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    /// Checkpoint file is malformed or belongs to a different architecture.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

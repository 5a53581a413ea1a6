use thiserror::Error;

use crate::dual::DualSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate precision: {0}")]
    DegeneratePrecision(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch has no advantages; compute them before updating")]
    MissingAdvantages,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("entropy budget unreachable: target entropy {target:.6} outside ({min:.6}, {max:.6})")]
    EntropyBudgetUnreachable { target: f64, min: f64, max: f64 },

    #[error("dual solver did not converge after {} evaluations (best eta={:.6e}, omega={:.6e})", best.evaluations, best.eta, best.omega)]
    DualNotConverged { best: DualSolution },

    #[error("non-positive curvature along natural gradient: w^T F w = {0:e}")]
    NonPositiveCurvature(f64),

    #[error("unknown environment or instance: {0}")]
    UnknownEnvironment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

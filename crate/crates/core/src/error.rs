use std::path::PathBuf;

/// Errors raised across the identification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("infeasible agent model: {0}")]
    InfeasibleModel(String),

    #[error("invalid agent parameters: {0}")]
    InvalidParams(String),

    #[error("interior-point solver hit the iteration cap with KKT residual {residual:e}")]
    NoConvergence { residual: f64 },

    #[error("baseline {baseline} at t={t} is not above ghost demand {d_min} + gap")]
    GhostDemandViolation { t: usize, baseline: f64, d_min: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("degenerate KKT system (constraint rows {indices:?}, condition estimate {condition:e})")]
    DegenerateSystem { indices: Vec<usize>, condition: f64 },

    #[error("active set changed under finite-difference perturbation of {param}")]
    ActiveSetFlip { param: &'static str },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-finite gradient from scenario {scenario}")]
    NonFiniteGradient { scenario: usize },

    #[error("too many skipped scenarios: {skipped} of {total}")]
    DegenerateRun { skipped: usize, total: usize },

    #[error("ground truth missing for {0}")]
    MissingGroundTruth(&'static str),

    #[error("schema error in {} (line {line}, column `{column}`): {message}", file.display())]
    Schema {
        file: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

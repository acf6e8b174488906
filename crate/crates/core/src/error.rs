use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("fields live on different phase grids")]
    GridMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("derivative order {0} exceeds the supported maximum of 4")]
    DerivativeOrder(usize),
    #[error("quadrature did not converge: {what} (achieved error estimate {achieved:e})")]
    Convergence { what: String, achieved: f64 },
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("translation not commensurate with the grid: {0}")]
    Incommensurate(String),
    #[error("step-size instability: {0}")]
    Instability(String),
    #[error("potential phase per step {phase:.3} rad exceeds the limit {limit:.3} rad")]
    PhaseViolation { phase: f64, limit: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidParameter(msg.into())
}

use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate direction: points {0:?} and {1:?} coincide")]
    DegenerateDirection([f64; 3], [f64; 3]),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("no feasible layout found after {0} attempts")]
    InfeasibleLayout(usize),

    #[error("TD iteration did not converge: residual {residual:e} after {sweeps} sweeps")]
    NonConvergence { residual: f64, sweeps: usize },

    #[error("metrics are empty")]
    EmptyMetrics,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be finite, got {values:?}")))
    }
}

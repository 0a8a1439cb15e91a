use thiserror::Error;

/// Errors surfaced by problem construction, the QP kernels and the solver loops.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem generation failed: {0}")]
    Generation(String),

    #[error("dual QP did not converge within {iters} iterations (gap {gap:.3e})")]
    QpFailure { iters: usize, gap: f64 },

    #[error("grey-box call budget exhausted ({used} of {budget})")]
    BudgetExhausted { used: u64, budget: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

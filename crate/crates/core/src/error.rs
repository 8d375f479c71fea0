//! Crate-wide error type.

use crate::admm::IterationStats;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {n} points for {k} workers (need at least {min})")]
    InsufficientData { n: usize, k: usize, min: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("kernel matrix is ill-conditioned: Cholesky failed after jitter escalation")]
    IllConditionedKernel,

    #[error("objective is not finite at the starting point")]
    InvalidStart,

    #[error("MAPE is undefined: actual value at index {0} is zero")]
    UndefinedMetric(usize),

    #[error("split error: {0}")]
    Split(String),

    #[error("csv format error at line {line}: {msg}")]
    CsvFormat { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("worker {worker_id} failed: {detail}")]
    Worker { worker_id: usize, detail: String },

    /// A training run stopped mid-loop. Carries the residual history of the
    /// iterations that completed before the failure.
    #[error("run aborted at iteration {iteration} by worker {worker_id}: {detail}")]
    AbortedRun {
        worker_id: usize,
        iteration: usize,
        detail: String,
        history: Vec<IterationStats>,
    },
}

//! Shared error type for the whole crate.

use thiserror::Error;

/// Errors produced by graph/tensor operations, solvers and training loops.
#[derive(Debug, Error)]
pub enum IgnnError {
    /// Dimension mismatch; carries both shapes so messages stay actionable.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// Input outside the operation's domain (empty vector, bad fraction, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values or other numeric breakdown; carries context.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative method ran out of budget before reaching its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Malformed input file; names the file and 1-based line.
    #[error("parse error in {file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// Bad configuration value or inconsistent schedule.
    #[error("config error: {0}")]
    Config(String),

    /// The cached fixed point no longer matches the model parameters.
    #[error("stale fixed-point cache: model parameters changed since Z* was computed")]
    StaleCache,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IgnnError>;

impl IgnnError {
    pub fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        IgnnError::Shape { op, left, right }
    }
}

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor operations, model evaluation, attacks and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// An operation that requires at least one element was given an empty tensor.
    #[error("empty tensor")]
    EmptyTensor,

    /// A gradient with zero L2 norm cannot be normalized into a direction.
    #[error("degenerate gradient: zero L2 norm")]
    DegenerateGradient,

    /// Caller violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Backtracking line search exhausted its budget without an admissible step.
    #[error("line search failed: no admissible step after {halvings} halvings")]
    LineSearchFailed { halvings: usize },

    /// A binary file did not match its format; `offset` points at the offending bytes.
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A dataset turned out to be empty where examples are required.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Rejection sampling gave up.
    #[error("sampling failed: {0}")]
    SamplingFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

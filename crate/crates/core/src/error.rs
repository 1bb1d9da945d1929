use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("time step {t} outside 1..={max}")]
    TimeOutOfRange { t: usize, max: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite gradient in layer `{layer}`")]
    NonFiniteGradient { layer: &'static str },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Domain(_) => 1,
            Error::ShapeMismatch { .. }
            | Error::TimeOutOfRange { .. }
            | Error::Corrupt(_)
            | Error::EmptyDataset
            | Error::Data(_)
            | Error::Io(_) => 2,
            Error::Numeric(_) | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => 3,
        }
    }
}

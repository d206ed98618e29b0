//! Crate-wide error type and exit-code mapping for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received tensors whose shapes violate its shape rule.
    #[error("{op}: shape mismatch: {details}")]
    Shape { op: &'static str, details: String },

    /// Tape misuse: backward on a non-scalar, backward without an active
    /// tape, or a loss that was not recorded on the active tape.
    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("data: {0}")]
    Data(String),

    #[error("config: line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training: {0}")]
    Train(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape { op, details: details.into() }
    }

    pub fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config { line, message: message.into() }
    }

    /// Process exit code per error class (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Data(_) => 3,
            Error::Graph(_) => 4,
            Error::Shape { .. } => 5,
            Error::Autodiff(_) => 6,
            Error::Train(_) => 7,
            Error::Checkpoint(_) => 8,
            Error::Io(_) => 9,
        }
    }
}

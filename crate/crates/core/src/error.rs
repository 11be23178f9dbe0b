use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("distribution has empty support")]
    EmptySupport,

    #[error("{0}")]
    Unsupported(String),

    #[error("trace underrun: all {steps} steps have been consumed")]
    TraceUnderrun { steps: usize },

    #[error("capability error: {0}")]
    Capability(String),

    /// Malformed input file. `line` is 1-based.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("trace has no steps")]
    EmptyTrace,

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: msg.into(),
        }
    }
}

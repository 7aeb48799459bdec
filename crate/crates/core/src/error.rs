use thiserror::Error;

/// Errors raised by the workbench library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Two inputs that must agree in length do not.
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    /// Receiver could not demodulate a frame.
    #[error("demodulation failed: {0}")]
    Demod(String),
    /// Malformed serialized data.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

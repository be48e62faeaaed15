use thiserror::Error;

/// Errors raised by the design engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BardError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A decision needs data that is not available yet (no completed
    /// assessments at the dose, empty pooled denominator).
    #[error("decision deferred: {0}")]
    Deferred(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(String),
}

impl BardError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        BardError::Parameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BardError::Config(msg.into())
    }
}

impl From<std::io::Error> for BardError {
    fn from(e: std::io::Error) -> Self {
        BardError::Io(e.to_string())
    }
}

pub type Result<T, E = BardError> = std::result::Result<T, E>;

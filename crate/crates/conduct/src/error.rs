use bard_core::BardError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConductError {
    #[error("{0} not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    /// The trial is not in a stage that allows the request.
    #[error("invalid state: {0}")]
    State(String),

    #[error("stage-2 quota reached: {0}")]
    Quota(String),

    #[error("invalid request: {0}")]
    Validation(String),

    #[error("replay failed at event {seq}: {message}")]
    Replay { seq: u64, message: String },

    #[error("storage error: {0}")]
    Storage(String),

    #[error(transparent)]
    Engine(#[from] BardError),
}

impl ConductError {
    pub fn replay(seq: u64, message: impl Into<String>) -> Self {
        Self::Replay { seq, message: message.into() }
    }
}

impl From<std::io::Error> for ConductError {
    fn from(e: std::io::Error) -> Self {
        Self::Storage(e.to_string())
    }
}

pub type Result<T, E = ConductError> = std::result::Result<T, E>;

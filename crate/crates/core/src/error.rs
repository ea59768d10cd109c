use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum NewtError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("state error: {0}")]
    State(String),
    #[error("unknown task '{name}'; known tasks: {known}")]
    UnknownTask { name: String, known: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NewtError>;

impl NewtError {
    pub fn dim(msg: impl Into<String>) -> Self {
        NewtError::Dim(msg.into())
    }
    pub fn invalid(msg: impl Into<String>) -> Self {
        NewtError::Invalid(msg.into())
    }
}

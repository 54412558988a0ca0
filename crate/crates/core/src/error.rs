use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical singularity: {0}")]
    Singular(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite loss {loss} at training step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

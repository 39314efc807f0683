use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// Training produced a non-finite loss. `last_finite_epoch` is the last
    /// epoch whose metrics were recorded before the failure.
    #[error("non-finite loss at epoch {epoch}, step {step} (last finite epoch: {last_finite_epoch:?})")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite_epoch: Option<usize>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

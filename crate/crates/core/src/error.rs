use thiserror::Error;

#[derive(Debug, Error)]
pub enum NbqError {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("encoding error at index {index}: {reason}")]
    Encoding { index: usize, reason: String },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NbqError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NbqError::Shape(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NbqError::Argument(msg.into()))
}

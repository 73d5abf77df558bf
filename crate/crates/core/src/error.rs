use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("search space too large: {size} sequences exceeds guard of {limit}")]
    GuardExceeded { size: u128, limit: u128 },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("remote error (request {id}): {message}")]
    Remote { id: u64, message: String },

    #[error("timed out waiting for remote model")]
    Timeout,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::GuardExceeded { .. } => "guard_exceeded",
            Error::Format(_) => "format",
            Error::Protocol(_) => "protocol",
            Error::Remote { .. } => "remote",
            Error::Timeout => "timeout",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

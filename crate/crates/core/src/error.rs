use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numerical error in {location}: {message}")]
    Numerical { location: String, message: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("oracle budget exceeded: {0}")]
    Budget(String),
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

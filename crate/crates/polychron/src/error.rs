//! Error type shared across the crate.

/// Errors produced by the library, grouped into categories that callers can
/// map onto exit codes or structured reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's preconditions.
    #[error("domain error: {0}")]
    Domain(String),
    /// Data (dataset, allocation, tensor) is inconsistent with the model.
    #[error("data error: {0}")]
    Data(String),
    /// A numeric evaluation produced a non-finite or invalid value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Text input could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    /// An operation that is deliberately not provided.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    /// Stable machine-readable category name, used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Numeric(_) => "numeric",
            Error::Parse { .. } => "parse",
            Error::Unsupported(_) => "unsupported",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

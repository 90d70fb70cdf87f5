use thiserror::Error;

/// Errors produced by the modeling and coding pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("statistics are empty (no context windows)")]
    EmptyStats,

    #[error("symbol at read {read}, position {position} has zero probability")]
    ZeroProbability { read: usize, position: usize },

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("no valid bin renumbering: {0}")]
    Renumbering(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("corrupt or truncated data: {0}")]
    Corrupt(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

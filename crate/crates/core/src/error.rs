//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The least-squares normal matrix is singular; one or more parameters
    /// are not identifiable from the supplied data.
    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    /// ODMR contrast is undefined because the OFF-window count is zero.
    #[error("undefined contrast: OFF counts are zero")]
    UndefinedContrast,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact could not be parsed.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

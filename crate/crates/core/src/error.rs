use std::path::PathBuf;

/// Errors produced by the re-ranking engine and its data layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A matrix left the domain of an operation (e.g. logm of a non-SPD matrix).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (non-convergence, overflow).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An operation was called outside of its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed record in a newline-delimited file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad caller input rather than engine failures.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Parse { .. } | Error::Config(_)
        )
    }
}

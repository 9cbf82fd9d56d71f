use std::io;

use thiserror::Error;

/// Errors raised anywhere in the reachability pipeline.
///
/// The variants line up with the command-line exit codes: usage errors are
/// caller mistakes (bad shapes, out-of-range indices), validation errors are
/// inputs that parse but violate an invariant, computation errors are
/// numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("computation error: {0}")]
    Computation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn computation(msg: impl Into<String>) -> Self {
        Error::Computation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn dim_mismatch(what: &str, expected: usize, got: usize) -> Self {
        Error::Usage(format!("{what}: expected dimension {expected}, got {got}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

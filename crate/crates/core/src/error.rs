use std::fmt;

use thiserror::Error;

/// Coarse classification of failures, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data.
    Data,
    /// A request outside the supported domain (ranges, shapes, parameters).
    Domain,
    /// Filesystem or stream failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate entry for {0}")]
    Duplicate(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("out of domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::Duplicate(_) | Error::InvalidData(_) | Error::Csv(_) => {
                ErrorKind::Data
            }
            Error::Domain(_) | Error::Config(_) => ErrorKind::Domain,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn parse(line: usize, message: impl fmt::Display) -> Self {
        Error::Parse {
            line,
            message: message.to_string(),
        }
    }

    pub(crate) fn domain(message: impl fmt::Display) -> Self {
        Error::Domain(message.to_string())
    }

    pub(crate) fn data(message: impl fmt::Display) -> Self {
        Error::InvalidData(message.to_string())
    }

    pub(crate) fn config(message: impl fmt::Display) -> Self {
        Error::Config(message.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

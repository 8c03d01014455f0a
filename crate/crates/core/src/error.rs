use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("character {ch:?} at position {position} is not in the vocabulary")]
    OutOfVocabulary { ch: char, position: usize },

    #[error("token id {0} is the blank symbol and cannot appear in a label sequence")]
    BlankInLabels(usize),

    #[error("token id {id} is outside the vocabulary of size {size}")]
    InvalidToken { id: usize, size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("vocabulary mismatch: {what} has hash {found}, expected {expected}")]
    VocabMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or missing input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Io { .. }
                | Error::OutOfVocabulary { .. }
                | Error::VocabMismatch { .. }
                | Error::Degenerate(_)
        )
    }
}

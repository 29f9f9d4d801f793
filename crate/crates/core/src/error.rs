use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid count at line {line}: {msg}")]
    Value { line: usize, msg: String },

    /// 0-based document and word ids.
    #[error("duplicate entry for document {doc}, word {word}")]
    DuplicateEntry { doc: usize, word: usize },

    #[error("duplicate vocabulary term {0:?}")]
    DuplicateTerm(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("frame error: {0}")]
    Frame(String),

    #[error("session error: {0}")]
    Session(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::Dimension { expected, found }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line} of {path}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {id:?}")]
    DuplicateDocId { id: String },

    #[error("unknown document id {id:?}")]
    UnknownDocId { id: String },

    #[error("span ({start}, {end}) out of range for document {doc_id:?} of length {len}")]
    SpanOutOfRange {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch ({context}): expected {expected}, got {got}")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("table format error: {0}")]
    Table(String),

    #[error("encoder checksum mismatch: {a:#018x} vs {b:#018x} (pass the override flag to merge anyway)")]
    ChecksumMismatch { a: u64, b: u64 },

    #[error("oracle record {record}: {message}")]
    OracleRecord { record: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

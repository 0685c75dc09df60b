use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the routing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("all records filtered")]
    AllFiltered,

    #[error("stratum {stratum:?} has {size} records; at least 3 are needed to populate every split")]
    StratumTooSmall { stratum: String, size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("record {sample_id}")]
    InRecord {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {what} expected {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("truncated payload at entry {0}")]
    Truncated(usize),

    #[error("duplicate sample_id {0:?}")]
    DuplicateId(String),

    #[error("missing sample_id {0:?}")]
    MissingId(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid json")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_record(sample_id: &str, source: Error) -> Self {
        Error::InRecord {
            sample_id: sample_id.to_string(),
            source: Box::new(source),
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::InRecord { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

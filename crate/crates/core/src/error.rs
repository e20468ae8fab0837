use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    /// An invariant that validated inputs can never break was broken anyway.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("leakage: {0}")]
    Leakage(String),

    #[error("insufficient pairs for {phrasing}: requested {requested}, available {available}")]
    InsufficientPairs {
        phrasing: String,
        requested: usize,
        available: usize,
    },

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("remote request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },

    #[error("stage `{stage}` failed: {source} (log: {log})")]
    Stage {
        stage: String,
        log: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

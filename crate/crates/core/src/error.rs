use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::graph::{EntityKind, Relation};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid UTF-8 input: {0}")]
    Decode(String),

    #[error("relation {relation:?} does not touch {kind:?} nodes")]
    KindMismatch {
        relation: Relation,
        kind: EntityKind,
    },

    #[error("unknown {kind:?} id {id:?}")]
    UnknownEntity { kind: EntityKind, id: String },

    #[error("{kind:?} index {index} out of range")]
    IndexOutOfRange { kind: EntityKind, index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("tf-idf vocabulary is empty after document-frequency filtering (min_df={min_df}, max_df={max_df})")]
    EmptyVocabulary { min_df: f64, max_df: f64 },

    #[error("embedding file {path}: {msg}")]
    Embedding { path: PathBuf, msg: String },

    #[error("non-finite value during training of {model}: {detail}")]
    Diverged { model: String, detail: String },

    #[error("no rated interactions in training data; use an implicit-feedback model instead")]
    NoRatings,

    #[error("leakage: model {model} ranked training item {book} for user {user}")]
    Leakage {
        model: String,
        user: usize,
        book: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("batch of size {0} has no in-batch negatives")]
    BatchTooSmall(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! Error types shared across the laboratory.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    CorpusParse { line: usize, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),

    #[error("pair {id:?}: {message}")]
    InvalidPair { id: String, message: String },

    #[error("entity {entity:?}: balanced composition needs {needed} indirect samples, found {available}")]
    Composition {
        entity: String,
        needed: usize,
        available: usize,
    },

    #[error("retain pool has {available} samples but the strategy needs at least {needed}")]
    InsufficientRetain { needed: usize, available: usize },

    #[error("retain entity {0:?} has no forget samples to pair with")]
    OrphanEntity(String),

    #[error("{0} must not be empty")]
    EmptyArgument(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{method} diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    TrainingDiverged {
        method: String,
        epoch: usize,
        batch: usize,
    },

    #[error("schedule references unknown pair id {0:?}")]
    UnresolvedRef(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

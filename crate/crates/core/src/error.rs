use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no records")]
    NoRecords,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// No event in the batch has a usable comparison partner.
    #[error("no comparable pairs")]
    NoComparablePairs,

    /// CE/CCE found nothing it could label.
    #[error("no labelable samples")]
    NoLabelableSamples,

    #[error("no events")]
    NoEvents,

    #[error("undefined CI: no comparable pairs")]
    UndefinedCi,

    #[error("undefined AUC: {0}")]
    UndefinedAuc(&'static str),

    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("degenerate sampler: every batch of epoch {epoch} was skipped")]
    DegenerateSampler { epoch: usize },

    #[error("split {split} has no events")]
    EmptySplit { split: &'static str },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for the per-batch "nothing to compare or label" failures that the
    /// trainer skips instead of aborting on.
    pub fn is_empty_batch(&self) -> bool {
        matches!(
            self,
            Error::NoComparablePairs | Error::NoLabelableSamples | Error::NoEvents
        )
    }
}

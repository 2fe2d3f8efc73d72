use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no triples")]
    EmptyGraph,
    #[error("text has no tokens")]
    EmptyText,
    #[error("entity span is empty")]
    EmptySpan,
    #[error("entity span {start}..{end} out of bounds for {len} tokens")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("graph entity `{0}` has no span in the text")]
    EntityMismatch(String),
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("corpus needs at least two items for document frequencies")]
    DegenerateIdf,
    #[error("length mismatch: {left} hypotheses vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("item {0} has an empty reference list")]
    EmptyReferences(usize),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid text: {0}")]
    InvalidText(String),
    #[error("corrupt dataset {path}: {reason}")]
    CorruptDataset { path: PathBuf, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("vocabulary hash mismatch: checkpoint has {expected}, data has {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

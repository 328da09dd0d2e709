use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A record in an input file failed to parse. `index` is the 0-based
    /// record position (line for JSONL, row for binary).
    #[error("record {index}: {message}")]
    Malformed { index: usize, message: String },

    #[error("record {index}: embedding has {found} dimensions, corpus has {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("record {index}: duplicate utterance id {id:?}")]
    DuplicateId { index: usize, id: String },

    #[error("record {index}: non-finite embedding component")]
    NonFinite { index: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("embedding dimension must be >= 2, got {0}")]
    SmallDimension(usize),

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Training or a metric produced a non-finite intermediate where the
    /// contract requires finite values.
    #[error("numeric overflow: {0}")]
    Overflow(String),

    /// An internal invariant failed; indicates a bug, mapped to its own CLI
    /// exit code.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

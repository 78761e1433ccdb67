use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is too small (minimum {minimum})")]
    VocabTooSmall { target: usize, minimum: usize },
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("not a softmax output: {0}")]
    NotSoftmax(String),
    #[error("malformed attention tensor: {0}")]
    MalformedAttention(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("line index {line} out of range for {line_count} lines")]
    LineOutOfRange { line: usize, line_count: usize },

    #[error("sequence of {len} positions exceeds model maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence has no content tokens")]
    EmptySequence,
    #[error("token id {id} outside model vocabulary of {vocab_size}")]
    TokenOutOfVocab { id: u32, vocab_size: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("checkpoint was trained with vocabulary {expected}, but vocabulary {actual} was supplied")]
    VocabHashMismatch { expected: String, actual: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate id {id:?} in {path}")]
    DuplicateId { path: String, id: String },
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

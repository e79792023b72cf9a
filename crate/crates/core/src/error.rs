use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientLength { needed: usize, got: usize },
    #[error("segment too short: need {needed} samples, got {got}")]
    SegmentTooShort { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("positional encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("input of {0} samples yields no latent frames")]
    EmptyEncoding(usize),
    #[error("zero-norm vector in cosine similarity")]
    DegenerateVector,
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidN(usize),
    #[error("frequency table is empty")]
    EmptyTable,
    #[error("empty input")]
    EmptyInput,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid cohort profile: {0}")]
    InvalidProfile(String),
    #[error("missing report section: {0}")]
    MissingSection(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid label file: {0}")]
    Labels(String),
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

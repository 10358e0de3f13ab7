use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the inspection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate vector: zero norm")]
    DegenerateVector,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid score at position {0}: not a finite number")]
    InvalidScore(usize),

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid size {0}: must be at least 1 pixel")]
    InvalidSize(u32),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("image too small: {width}x{height} (need at least 3x3)")]
    ImageTooSmall { width: u32, height: u32 },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("store error: {0}")]
    Store(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("class not found: {0}")]
    ClassNotFound(String),

    #[error("need at least one positive and one negative example")]
    InsufficientClasses,

    #[error("no vocabulary term found in caption {0:?}")]
    UnlabeledCaption(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid parameters: {0}")]
    Param(String),

    #[error("region error: {0}")]
    Region(String),

    #[error("insufficient data for class {class}: need {needed}, have {available}")]
    InsufficientData {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("face list does not match the supplied topology: {0}")]
    Correspondence(String),
    #[error("count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("mesh {index} does not share the corpus topology: {reason}")]
    Corpus { index: usize, reason: String },
    #[error("vertex {0} is isolated")]
    IsolatedVertex(usize),
    #[error("empty segmentation part {0}")]
    EmptyPart(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("target size {requested} unreachable, stopped at {achieved} vertices")]
    Unreachable { requested: usize, achieved: usize },
    #[error("hierarchy level {level} out of range (have {levels})")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("container format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

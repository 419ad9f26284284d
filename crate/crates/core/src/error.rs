use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{layer}: expected input width {expected}, got {got}")]
    WidthMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("expected {expected} gradients, got {got}")]
    GradientCount { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing input: {0}")]
    MissingInput(&'static str),

    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse {value:?} in column {column:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid split: {0}")]
    Split(String),
    #[error("series length {length} is shorter than lookback + horizon = {needed}")]
    SeriesTooShort { length: usize, needed: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no evaluation windows")]
    NoWindows,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

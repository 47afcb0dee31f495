use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("bad IDX magic number {0}")]
    BadMagic(u32),
    #[error("truncated IDX payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss node must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("checkpoint does not match: {0}")]
    ConfigMismatch(String),
    #[error("degenerate labels: only class {0} is present")]
    DegenerateLabels(usize),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("need at least two tasks, got {0}")]
    TooFewTasks(usize),
    #[error("task {task} has {classes} classes, need at least two")]
    TooFewClasses { task: String, classes: usize },
    #[error("matrix cell ({row}, {col}) = {value} is outside [0, 1]")]
    OutOfRangeCell { row: usize, col: usize, value: f64 },
    #[error("task registries differ: {0}")]
    RegistryMismatch(String),
    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}

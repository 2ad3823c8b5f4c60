use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward called on a variable that was not recorded by this tape")]
    NoForward,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at cycle {cycle}, epoch {epoch}: loss {loss}")]
    Divergence {
        cycle: usize,
        epoch: usize,
        loss: f64,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no droppable units remain")]
    NoDroppableUnits,

    #[error("unit {0} is already masked")]
    AlreadyDropped(usize),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("dataset file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("dataset not found: {0}")]
    DatasetMissing(PathBuf),

    #[error("aggregation input mismatch: {0}")]
    MixedRuns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::UnknownMetric(_) | Error::InvalidSpec(_) => 2,
            Error::DatasetMissing(_) | Error::Format { .. } => 3,
            Error::Divergence { .. } | Error::NonFinite(_) => 4,
            _ => 1,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },

    #[error("non-finite function value at coordinate {coordinate} ({value})")]
    NonFiniteEvaluation { coordinate: usize, value: f64 },

    #[error("normalized variable {index} = {value} is outside [0, 1]")]
    OutOfUnitRange { index: usize, value: f64 },

    #[error("unknown variable `{name}`; valid names: {valid}")]
    UnknownVariable { name: String, valid: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite input in sample {sample}")]
    NonFiniteInput { sample: usize },

    #[error("non-finite value at stage `{0}`")]
    NonFiniteStage(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {breakdown}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        breakdown: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("station `{0}` is not in the geometry file")]
    UnknownStation(String),

    #[error("station `{station}` is missing {missing} of {total} days")]
    SparseStation {
        station: String,
        missing: usize,
        total: usize,
    },

    #[error("split leaves no samples outside the held-out window")]
    EmptySplit,

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

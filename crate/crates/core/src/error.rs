use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the numeric floor")]
    ZeroNorm { norm: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probability {value} lies outside [0, 1] beyond the clamping slack")]
    ProbabilityOutOfRange { value: f64 },

    #[error("dimension {d} not supported here: {reason}")]
    Dimension { d: usize, reason: &'static str },

    #[error("model shape not supported: {0}")]
    ModelShape(String),

    #[error("circuit needs {qubits} qubits, simulator limit is {max}")]
    SimulatorLimit { qubits: usize, max: usize },

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch})")]
    Divergence { epoch: usize, last_finite_epoch: usize },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("rows with missing values: {rows:?}")]
    MissingValues { rows: Vec<usize> },

    #[error("row {row}: label value {value:?} has no mapping")]
    UnmappedLabel { row: usize, value: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

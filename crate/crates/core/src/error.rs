use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    ParseNumber { row: usize, column: String, value: String },
    #[error("row {row}: unknown category `{value}` in column `{column}`")]
    UnknownCategory { row: usize, column: String, value: String },
    #[error("row {row}: value {value} of `{column}` is outside the declared domain")]
    RowOutOfDomain { row: usize, column: String, value: f64 },
    #[error("row {row}: unknown label `{value}`")]
    UnknownLabel { row: usize, value: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("input is empty")]
    EmptyInput,
    #[error("value for `{feature}` is outside its domain: {detail}")]
    OutOfDomain { feature: String, detail: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("expected a vector of length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("schema fingerprint mismatch: model was trained for {expected}, dataset has {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("subgroup is empty")]
    EmptySubgroup,
    #[error("unknown subgroup {0}")]
    UnknownSubgroup(u64),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

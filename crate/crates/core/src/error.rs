use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("column `{0}` named in the schema is missing from the header")]
    MissingColumn(String),
    #[error("line {line}: column `{column}` holds non-binary label `{value}`")]
    NonBinaryLabel { line: u64, column: String, value: String },
    #[error("line {line}: column `{column}` value `{value}` is not numeric")]
    Unparseable { line: u64, column: String, value: String },
    #[error("no usable rows")]
    NoUsableRows,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("temporal split leaves the {0} output empty")]
    EmptySplit(&'static str),
    #[error("only {found} non-empty blocks at {block_km} km, need at least {needed}")]
    TooFewBlocks { block_km: f64, found: usize, needed: usize },
    #[error("class {label} has {count} records, fewer than the {needed} clusters")]
    ClassTooSmall { label: u8, count: usize, needed: usize },
    #[error("interval {interval}: {reason}")]
    Interval { interval: String, reason: String },
    #[error("both classes are required: {0}")]
    SingleClass(String),
    #[error("variogram: {0}")]
    Variogram(String),
    #[error("feature width mismatch: model expects {expected}, got {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("smote: {0}")]
    Smote(String),
    #[error("every fold was skipped (single-class validation sets)")]
    AllFoldsSkipped,
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("config: {0}")]
    Config(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

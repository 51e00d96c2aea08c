use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("gap in monthly sequence at row {row}: expected {expected}, found {found}")]
    MonthGap {
        row: usize,
        expected: String,
        found: String,
    },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("kernel matrix numerically indefinite (jitter escalated to {jitter:e})")]
    Indefinite { jitter: f64 },

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("model document: {0}")]
    Document(String),
}

pub type Result<T> = std::result::Result<T, Error>;

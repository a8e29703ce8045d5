use thiserror::Error;

/// Errors raised across the data, learning and conformal layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell in column `{column}` at row {row}: {value:?}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("invalid treatment value {value} at row {row}")]
    InvalidTreatment { row: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("missing required data: {0}")]
    MissingData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

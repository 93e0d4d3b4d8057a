use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("row {row}: cannot parse {column} value {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("column {0} is not categorical")]
    NotCategorical(String),

    #[error("column {0} is constant at this node")]
    ConstantColumn(String),

    #[error("need at least 2 categories, found {0}")]
    TooFewCategories(usize),

    #[error("{m} categories exceeds the exhaustive limit of {limit}")]
    TooManyCategories { m: usize, limit: usize },

    #[error("assignment is trivial (one side empty)")]
    TrivialAssignment,

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("column {column}: category {label:?} was never seen in training")]
    UnknownCategory { column: String, label: String },

    #[error("bad model file: {0}")]
    Model(String),
}

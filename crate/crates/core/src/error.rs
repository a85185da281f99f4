use std::path::PathBuf;

use thiserror::Error;

use crate::trainer::{GateReport, StepRecord};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("divergence at step {step}: {reason}")]
    Divergence {
        step: usize,
        reason: String,
        /// The most recent per-step records before the abort.
        window: Vec<StepRecord>,
    },

    #[error("normal equations are singular (lambda = {lambda}); add ridge regularisation")]
    Singular { lambda: f64 },

    #[error("plastic index set is empty")]
    EmptyPlasticSet,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{0}")]
    Data(#[from] DataError),

    #[error("config error for key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("hyper-parameter gate rejected the configuration: {}", .0.summary())]
    GateRejected(Box<GateReport>),

    #[error("self-test did not converge: {0}")]
    NotConverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Errors raised while reading a UCR-style TSV file. Line numbers are 1-based.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("empty data file")]
    EmptyFile,

    #[error("line {line}: ragged row, expected {expected} values, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },

    #[error("line {line}: field {field} is not numeric: {text:?}")]
    NonNumeric { line: usize, field: usize, text: String },

    #[error("line {line}: series has no values")]
    NoValues { line: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

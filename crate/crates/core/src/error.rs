use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error{}: {message}", location(*line, *column))]
    Parse {
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{what} has {got} rows, expected {expected}")]
    SeriesLength {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("placed {placed} of {wanted} EV sessions after {attempts} draws")]
    SessionSampling {
        placed: usize,
        wanted: usize,
        attempts: usize,
    },
    #[error("action vector has {got} entries, pool has {expected} chargers")]
    ActionLength { got: usize, expected: usize },
    #[error("simulation already finished at step {0}")]
    Finished(usize),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("requested power must be nonnegative, got {0}")]
    NegativeRequest(f64),
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}

impl CoreError {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidField { field: field.into(), reason: reason.into() }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count {0} outside supported range 1..={max}", max = crate::simcore::MAX_QUBITS)]
    Size(usize),

    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    Index { index: usize, n_qubits: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid gate: {0}")]
    Gate(String),

    #[error("post-selection failed: outcome probability {0:e} below threshold")]
    PostSelection(f64),

    #[error("destructive cancellation: linear combination has norm {0:e}")]
    DestructiveCancellation(f64),

    #[error("degenerate coefficients: {0}")]
    DegenerateCoefficients(String),

    #[error("parameter binding failed: {0}")]
    Binding(String),

    #[error("inconsistent Hadamard-test readout: recovered magnitude {0}")]
    Inconsistent(f64),

    #[error("input outside domain: {0}")]
    InputDomain(String),

    #[error("degenerate readout: normaliser {0:e}")]
    DegenerateReadout(f64),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("IDX format error in {path} at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("state error: {0}")]
    State(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a numerically degenerate sample rather than bad input.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Error::PostSelection(_)
            | Error::DestructiveCancellation(_)
            | Error::DegenerateReadout(_) => true,
            Error::Sample { source, .. } => source.is_degenerate(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

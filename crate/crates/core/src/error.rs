use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no resonance found in trace: {0}")]
    NoResonance(String),
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
    #[error("division guard: {0}")]
    DivisionGuard(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoResonance(_)
                | Error::RankDeficient(_)
                | Error::DivisionGuard(_)
                | Error::Calibration(_)
                | Error::NonConvergence(_)
                | Error::Degenerate(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

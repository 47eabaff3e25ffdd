use std::io;
use std::path::PathBuf;

use rtmix_core::rtmx::RtmxError;
use rtmix_core::{ConfigError, SimError};
use rtmix_surrogate::data::DataError;
use rtmix_surrogate::rollout::RolloutError;
use rtmix_surrogate::rtnn::RtnnError;
use rtmix_surrogate::{NnError, TrainError};
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NON_FINITE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    NonFinite(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io { .. } => EXIT_IO,
            CliError::NonFinite(_) => EXIT_NON_FINITE,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        CliError::Io { path: path.into(), message: err.to_string() }
    }

    /// Undecodable bytes count as I/O failures, inconsistent contents as config errors.
    pub fn rtmx(path: impl Into<PathBuf>, err: RtmxError) -> Self {
        match err {
            RtmxError::Config(e) => CliError::Config(format!("{}: {e}", path.into().display())),
            RtmxError::Inconsistent(e) => CliError::Config(format!("{}: {e}", path.into().display())),
            other => CliError::io(path, other),
        }
    }

    pub fn rtnn(path: impl Into<PathBuf>, err: RtnnError) -> Self {
        match err {
            RtnnError::Config(_) | RtnnError::Mismatch(_) | RtnnError::Nn(_) => {
                CliError::Config(format!("{}: {err}", path.into().display()))
            }
            other => CliError::io(path, other),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Qp { .. } | SimError::Fem(_) => CliError::Solver(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Failure writing to the console.
impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::io("<stdout>", e)
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// Every message names the subsystem that produced it so that CLI users can
/// tell a data problem from a solver problem.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed validation (bad parameters, malformed series, bad config).
    #[error("{subsystem}: invalid input: {message}")]
    Invalid {
        subsystem: &'static str,
        message: String,
    },

    /// The optimization problem has no feasible point.
    #[error("{subsystem}: infeasible: {message}")]
    Infeasible {
        subsystem: &'static str,
        message: String,
    },

    /// A numerical solver failed or could not certify its answer.
    #[error("{subsystem}: solver failure: {message}")]
    Solver {
        subsystem: &'static str,
        message: String,
    },

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn invalid(subsystem: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            subsystem,
            message: message.into(),
        }
    }

    pub fn infeasible(subsystem: &'static str, message: impl Into<String>) -> Self {
        Error::Infeasible {
            subsystem,
            message: message.into(),
        }
    }

    pub fn solver(subsystem: &'static str, message: impl Into<String>) -> Self {
        Error::Solver {
            subsystem,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input (config, data, parameters).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::Json { .. } | Error::Csv { .. }
        )
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. })
    }
}

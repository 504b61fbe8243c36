use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "degenerate truncation interval ({lower}, {upper}] with probability mass {mass:e}{}",
        observation.map(|i| format!(" at observation {i}")).unwrap_or_default()
    )]
    DegenerateInterval {
        observation: Option<usize>,
        lower: f64,
        upper: f64,
        mass: f64,
    },

    #[error(
        "infeasible latent state{}: {message}",
        observation.map(|i| format!(" at observation {i}")).unwrap_or_default()
    )]
    InfeasibleState { observation: Option<usize>, message: String },

    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column '{column}': cannot parse '{value}'")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("column '{0}' has zero variance")]
    ZeroVariance(String),

    #[error("dataset is not identifiable: {0}")]
    Identifiability(String),

    #[error("proposal tuning failed: last scale {scale}, acceptance rate {acceptance}")]
    Tuning { scale: f64, acceptance: f64 },

    #[error("degenerate chains: {0}")]
    DegenerateChains(String),

    #[error("criterion undefined: non-finite log-likelihood at observations {0:?}")]
    UndefinedCriterion(Vec<usize>),

    #[error(
        "all importance weights vanished{}",
        observation.map(|i| format!(" at observation {i}")).unwrap_or_default()
    )]
    DegenerateProposal { observation: Option<usize> },

    #[error("singular normal equations for the {0} design")]
    Rank(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn with_observation(self, index: usize) -> Self {
        match self {
            Error::DegenerateInterval {
                lower, upper, mass, ..
            } => Error::DegenerateInterval {
                observation: Some(index),
                lower,
                upper,
                mass,
            },
            Error::DegenerateProposal { .. } => Error::DegenerateProposal {
                observation: Some(index),
            },
            Error::InfeasibleState { message, .. } => Error::InfeasibleState {
                observation: Some(index),
                message,
            },
            other => other,
        }
    }
}

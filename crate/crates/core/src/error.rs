use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of a failure, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty sample")]
    EmptySample,

    #[error("no trials")]
    NoTrials,

    #[error("integrand not finite at node {node}")]
    NonFiniteIntegrand { node: f64 },

    #[error("invalid scale: sigma must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("degenerate design: Gram matrix is rank deficient")]
    DegenerateDesign,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unbalanced measures: total weights {left} vs {right}")]
    UnbalancedMeasures { left: f64, right: f64 },

    #[error("sample size below theory threshold (omega = {omega})")]
    BelowTheoryThreshold { omega: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("transportation solver did not converge after {0} pivots")]
    SolverStalled(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::NoTrials | Error::Json(_) => {
                ErrorClass::Config
            }
            Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScale(sigma))
    }
}

pub(crate) fn check_weight(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("mixture weight {pi} outside (0, 1)")))
    }
}

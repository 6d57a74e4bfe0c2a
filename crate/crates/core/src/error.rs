//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Convergence,
    Usage,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Data => "data",
            ErrorClass::Convergence => "convergence",
            ErrorClass::Usage => "usage",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error at row {row}: {reason}")]
    Data { row: usize, reason: String },

    #[error("data error: {0}")]
    Dataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("bracket error: target {target} is {side} the range of the function on [{lo}, {hi}]")]
    Bracket {
        target: f64,
        side: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error("range error: {0}")]
    Range(String),

    #[error("infinite expected wait: no gap larger than {0} s has positive probability")]
    InfiniteWait(f64),

    #[error("estimator undefined: {0}")]
    Estimator(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("fit did not converge on any start (best log-likelihood {best_ll})")]
    Convergence {
        best_ll: f64,
        best: Box<crate::estimation::FitResult>,
    },

    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Data { .. } | Error::Dataset(_) | Error::Csv(_) | Error::Json(_) => {
                ErrorClass::Data
            }
            Error::Convergence { .. } | Error::Bootstrap(_) => ErrorClass::Convergence,
            Error::Usage(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Io(_) => ErrorClass::Io,
            Error::Domain(_)
            | Error::Numeric(_)
            | Error::Bracket { .. }
            | Error::Range(_)
            | Error::InfiniteWait(_)
            | Error::Estimator(_)
            | Error::Simulation(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

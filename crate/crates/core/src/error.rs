use thiserror::Error;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Convergence,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate execution: zero market volume between start and end")]
    DegenerateExecution,

    #[error("participation overflow: eta = {eta} exceeds 1")]
    ParticipationOverflow { eta: f64 },

    #[error("cleaning removed every metaorder")]
    EmptyPanel,

    #[error("target autocorrelation is not positive definite at lag {lag}")]
    NotPositiveDefinite { lag: usize },

    #[error("rank-deficient design; collinear columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("fit did not converge after {iterations} iterations (cost trace {trace:?})")]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::NotPositiveDefinite { .. } => {
                ErrorKind::Config
            }
            Error::NoConvergence { .. } => ErrorKind::Convergence,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(x))
    }
}

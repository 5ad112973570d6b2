use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("longitudinal speed {0} m/s is below the allowed minimum {1} m/s")]
    SpeedTooLow(f64, f64),

    #[error("time step must be positive, got {0}")]
    NonPositiveTimeStep(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    #[error("regression matrix is rank deficient (sigma_min = {0:e})")]
    RankDeficient(f64),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("regularization heuristic undefined for equal singular values")]
    EqualSingularValues,

    #[error("eta_n = {0} is not positive; error bound undefined")]
    EtaNotPositive(f64),

    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("series must not be empty")]
    EmptySeries,

    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("log schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("log row {row}: {msg}")]
    Row { row: usize, msg: String },

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

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
    pub(crate) fn at_frame(self, index: usize) -> Error {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                index,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

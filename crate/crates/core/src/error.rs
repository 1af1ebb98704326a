use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("inconsistent atom count: frame {frame} has {found} atoms, expected {expected}")]
    AtomCount {
        frame: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-positive box {0:?} in frame {1}")]
    NonPositiveBox([f64; 3], usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("least-squares design matrix is rank deficient")]
    RankDeficient,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

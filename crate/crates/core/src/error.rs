use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coloring {finer} does not refine coloring {coarser}")]
    NotRefinement { coarser: usize, finer: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("precision exhausted at depth {depth}: point norm reached the ball boundary")]
    PrecisionExhausted { depth: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch} (grad norm {grad_norm:.3e}, clamps {clamps})")]
    NonFiniteLoss {
        epoch: usize,
        grad_norm: f64,
        clamps: u64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

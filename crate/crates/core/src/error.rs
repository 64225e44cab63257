use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate row for sample {sample_id}: all neighbor distances are zero")]
    DegenerateRow { sample_id: usize },

    #[error("no usable feature rows: every sample has a zero-norm feature vector")]
    EmptyFeatures,

    #[error("curve fit did not converge (residual {residual:.3e})")]
    FitDiverged { residual: f64 },

    #[error("eigen-solver failure: {0}")]
    Eigen(String),

    #[error("rank {rank} is below the requested dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("dataset truncated: expected {expected} more bytes in {section}")]
    Truncated { section: &'static str, expected: usize },

    #[error("unsupported dataset version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("field has nonzero mean (|V(0)| = {0:e})")]
    NonzeroMean(f64),

    #[error("zero mode has no symbol or eigenbasis")]
    ZeroMode,

    #[error("field is not divergence free: residual {residual:e} at mode {mode:?}")]
    NotDivergenceFree { mode: [i64; 3], residual: f64 },

    #[error("field is not supported where required: {0}")]
    Support(String),

    #[error("geometry or grid mismatch: {0}")]
    Mismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure at t = {t}: {reason}")]
    Numerical { t: f64, reason: String },

    #[error("arithmetic overflow in exact resonance test")]
    Overflow,

    #[error("resonance fiber bound violated: {0}")]
    FiberBound(String),

    #[error("audit failed: {0}")]
    Audit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad checkpoint: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
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

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("resolution error: target h = {h} exceeds inner radius {r2}")]
    Resolution { h: f64, r2: f64 },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("mesh invariant violated: {0}")]
    InvalidMesh(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver failure at t = {time}: {reason}")]
    SolverFailure { time: f64, reason: String },

    #[error("requested {requested} modes but only {admissible} are above the rank tolerance")]
    Rank { requested: usize, admissible: usize },

    #[error("negative eigenvalue {value:e} of the correlation matrix (largest {largest:e})")]
    NegativeEigenvalue { value: f64, largest: f64 },

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("time grids are not aligned: {0}")]
    MisalignedGrids(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    UnsupportedVersion { path: PathBuf, found: u32, expected: u32 },

    #[error("content hash mismatch in {path}")]
    HashMismatch { path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },

    #[error("missing required config key `{0}`")]
    MissingKey(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

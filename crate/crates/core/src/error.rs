use std::fmt;

/// Error type shared by all modules of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("crack misaligned with mesh: {0}")]
    CrackMisaligned(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix at pivot {pivot} (|d| = {magnitude:e})")]
    Singular { pivot: usize, magnitude: f64 },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("insufficient snapshots: {0}")]
    InsufficientSnapshots(String),
    #[error("tolerance not reached: {0}")]
    ToleranceNotReached(String),
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
    #[error("artifact corrupted: {0}")]
    Corrupted(String),
    #[error("load outside component: {0}")]
    LoadOutside(String),
    #[error("zero signal: {0}")]
    ZeroSignal(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl fmt::Display) -> Error {
    Error::DimensionMismatch(what.to_string())
}

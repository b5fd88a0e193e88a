use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid structure config: {0}")]
    InvalidConfig(String),

    #[error("bad magic: expected \"STCV\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: header declares {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("rank/extent overflow: {0}")]
    ExtentOverflow(String),

    #[error("structure matrix is rank deficient (rank {rank}, expected {expected})")]
    RankDeficient { rank: usize, expected: usize },

    #[error("residual exceeded in {location}: {residual:.3e} > tolerance {tolerance:.3e}")]
    ResidualExceeded {
        location: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("zero-norm weight tensor in {0}")]
    ZeroNorm(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("constraint violation in layer {layer}: {message}")]
    ConstraintViolation { layer: usize, message: String },

    #[error("empty network specification")]
    EmptyNetwork,

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

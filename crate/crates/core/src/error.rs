use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate gaussian: covariance determinant {det:e} below tolerance")]
    DegenerateGaussian { det: f64 },

    #[error("kernel support {support} too small: truncated mass {mass:e} exceeds 1e-3")]
    SupportTooSmall { support: usize, mass: f64 },

    #[error("ensemble has zero variance")]
    ZeroVariance,

    #[error("isoplanatic integral is zero; angle is unbounded")]
    InfiniteAngle,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 usage/config, 2 io, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::PngDecode(_) | Error::PngEncode(_) => 2,
            Error::Unsupported(_) => 2,
            Error::DegenerateGaussian { .. } | Error::ZeroVariance | Error::InfiniteAngle => 3,
            Error::Numerical(_) => 3,
            Error::Json(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidArgument(_)
            | Error::SupportTooSmall { .. } => 1,
        }
    }
}

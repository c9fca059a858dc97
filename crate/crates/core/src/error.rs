//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two rasters that must share dimensions do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value violates its documented range.
    #[error("value out of range: {0}")]
    OutOfRange(String),

    /// A configuration is internally inconsistent or violates a precondition.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Disc segmentation produced an empty mask.
    #[error("no disc found: {0}")]
    NoDiscFound(String),

    /// A dataset entry failed validation; the message names the entry.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A weight file is corrupt or does not match the expected config.
    #[error("weight file error: {0}")]
    WeightFormat(String),

    /// Training hit a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Bad command-line usage (flag combinations, missing arguments).
    #[error("{0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable process exit code contract: 0 success, 1 usage error,
    /// 2 data validation error, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidConfig(_) => 1,
            Error::Dataset(_) | Error::DimensionMismatch(_) | Error::OutOfRange(_) => 2,
            _ => 3,
        }
    }
}

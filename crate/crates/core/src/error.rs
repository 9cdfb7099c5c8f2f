use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed image header: {0}")]
    MalformedHeader(String),

    #[error("image is {found_width}x{found_height}, expected {expected_width}x{expected_height}")]
    WrongDimensions {
        expected_width: usize,
        expected_height: usize,
        found_width: usize,
        found_height: usize,
    },

    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),

    #[error("truncated image data: expected {expected} bytes, found {found}")]
    TruncatedImage { expected: usize, found: usize },

    #[error("symmetry index needs an even width, got {0}")]
    OddWidth(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {needed} samples, got {given}")]
    InsufficientSamples { needed: usize, given: usize },

    #[error("retained dimension k={k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("zero variance in coordinate(s) {0:?}")]
    ZeroVariance(Vec<usize>),

    #[error("sample size {0} outside the supported range 3..=5000")]
    SampleSizeOutOfRange(usize),

    #[error("all sample values are identical")]
    ConstantSample,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("skewness parameter delta[{index}] = {value} outside (-1, 1)")]
    DeltaOutOfRange { index: usize, value: f64 },

    #[error("accepted set is empty")]
    EmptyAcceptedSet,

    #[error("model file version mismatch: {0}")]
    Version(String),

    #[error("model file truncated")]
    Truncated,

    #[error("model file checksum mismatch")]
    Checksum,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use crate::raster::BandId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("payload size mismatch for {band}: expected {expected} floats, found {actual}")]
    SizeMismatch {
        band: String,
        expected: usize,
        actual: usize,
    },

    #[error("unknown band name `{0}`")]
    UnknownBand(String),

    #[error("raster has no bands")]
    NoBands,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("band {0} is present in the raster but missing from the calibration model")]
    MissingCalibration(BandId),

    #[error("empty pixel list: {0}")]
    EmptyPixels(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for violated internal invariants, as opposed to bad input data.
    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}

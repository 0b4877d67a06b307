use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("embedding provider mismatch: {left} vs {right}")]
    ProviderMismatch { left: String, right: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image decode error on {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), reason: reason.into() }
    }
}

/// Non-fatal conditions raised by degenerate inputs.
///
/// Operations that can degrade gracefully return the warning next to their
/// result instead of failing, and also emit it through `log`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    /// Min-max normalisation of an image whose pixels are all equal.
    ConstantImage,
    /// Otsu thresholding found no split (single intensity).
    NoThresholdSplit,
    /// Segmentation retained no foreground pixels.
    EmptyForeground,
    /// Registration of a constant image is undefined; zero shift returned.
    DegenerateRegistration,
    /// Patch geometry does not tile the canvas exactly.
    InexactTiling,
}

impl Warning {
    pub(crate) fn emit(self, context: &str) -> Self {
        log::warn!("{context}: {self:?}");
        self
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error in layer `{layer}`: {message}")]
    Config { layer: String, message: String },

    #[error("numerical error in `{layer}`: {message}")]
    Numerical { layer: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("parameter shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("model hash mismatch: stream was written by {stream}, checkpoint is {checkpoint}")]
    ModelMismatch { stream: String, checkpoint: String },

    #[error("header checksum mismatch")]
    HeaderChecksum,

    #[error("image dimensions {width}x{height} are not supported")]
    Dimensions { width: u64, height: u64 },

    #[error("empty corpus: no usable images in {0}")]
    EmptyCorpus(PathBuf),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid sweep config: {0}")]
    SweepConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            layer: layer.into(),
            message: message.into(),
        }
    }
}

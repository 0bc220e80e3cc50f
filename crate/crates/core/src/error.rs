use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("{origin}: {kind}")]
    Format { origin: String, kind: FormatError },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("evaluation mask selects no pixels")]
    EmptyMask,

    #[error("no gradient check registered under `{0}`")]
    UnknownCheck(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(origin: impl Into<String>, kind: FormatError) -> Self {
        Error::Format { origin: origin.into(), kind }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failures while decoding or encoding one of the on-disk formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic(String),

    #[error("color PFM (\"PF\") is not supported, expected grayscale \"Pf\"")]
    ColorPfm,

    #[error("malformed header: {0}")]
    Header(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("unsupported dtype tag {0}")]
    Dtype(u8),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("expected a 16-bit single-channel PNG, found {0}")]
    KittiLayout(String),

    #[error("expected an 8-bit RGB image, found {0}")]
    ImageLayout(String),

    #[error("decode failed: {0}")]
    Decode(String),

    #[error("disparity {value} at ({x}, {y}) exceeds the encodable maximum of 255.996 px")]
    OutOfRange { value: f32, x: usize, y: usize },
}

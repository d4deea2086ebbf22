use std::fmt;
use std::path::PathBuf;

/// What part of a raster or manifest failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatKind {
    Magic,
    Header,
    Truncated,
    Manifest,
    Checkpoint,
    Config,
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormatKind::Magic => "magic",
            FormatKind::Header => "header",
            FormatKind::Truncated => "truncated",
            FormatKind::Manifest => "manifest",
            FormatKind::Checkpoint => "checkpoint",
            FormatKind::Config => "config",
        };
        f.write_str(s)
    }
}

/// Failure class of a segmentation backend call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendErrorKind {
    Connect,
    Timeout,
    Protocol,
    Server,
}

impl fmt::Display for BackendErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BackendErrorKind::Connect => "connect",
            BackendErrorKind::Timeout => "timeout",
            BackendErrorKind::Protocol => "protocol",
            BackendErrorKind::Server => "server",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("box is empty after clipping to the image")]
    DegenerateBox,
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("optimizer produced a non-finite value")]
    NonFiniteUpdate,
    #[error("prototype for class {0} has not been populated; train the refiner first")]
    EmptyPrototype(usize),
    #[error("backend error ({kind}): {message}")]
    Backend {
        kind: BackendErrorKind,
        message: String,
    },
    #[error("format error ({kind}): {message}")]
    Format { kind: FormatKind, message: String },
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn format(kind: FormatKind, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }

    pub(crate) fn backend(kind: BackendErrorKind, message: impl Into<String>) -> Self {
        Error::Backend {
            kind,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }

    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch { expected, actual }
    }

    /// True for errors raised by a segmentation backend.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

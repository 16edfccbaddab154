use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("output shape must be non-empty")]
    EmptyOutput,
    #[error("quantile {0} outside [0, 1]")]
    QOutOfRange(f64),
    #[error("plane is empty")]
    EmptyPlane,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no offset reaches the minimum overlap of {0} pixels")]
    NoValidOverlap(usize),
    #[error("low contrast: {0}")]
    LowContrast(String),
    #[error("plane {height}x{width} is smaller than 3x3")]
    TooSmall { height: usize, width: usize },
    #[error("window of size {size} around ({x:.1}, {y:.1}) crosses the slide border")]
    Border { x: f64, y: f64, size: usize },
    #[error("coordinate ({x:.1}, {y:.1}) maps outside the moving image")]
    OutOfMovingBounds { x: f64, y: f64 },
    #[error("unknown patient '{0}'")]
    UnknownPatient(String),
    #[error("fold planning needs 4 partitions, got {0}")]
    BadPartitionCount(usize),
    #[error("shift {0} px is not smaller than the patch side")]
    ShiftTooLarge(usize),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("confusion counts are all zero")]
    EmptyCounts,
    #[error("ROC AUC needs both classes present")]
    SingleClass,
    #[error("patient '{0}' has no cell scores")]
    EmptyPatient(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CometError>;

#[derive(Debug, Error)]
pub enum CometError {
    #[error("insufficient history: need {required} values, have {available}")]
    InsufficientHistory { required: usize, available: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("memory holds {count} entries but retrieval needs k = {k}")]
    MemoryTooSmall { count: usize, k: usize },

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("no valid evaluation anchors: {0}")]
    NoAnchors(String),

    #[error("not a COMET model file")]
    BadMagic,

    #[error("unsupported model file version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("trailing data: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CometError {
    /// Stable machine-readable identifier, used as the `error_code` prefix by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            CometError::InsufficientHistory { .. } => "insufficient_history",
            CometError::DimensionMismatch { .. } => "dimension_mismatch",
            CometError::MemoryTooSmall { .. } => "memory_too_small",
            CometError::SeriesTooShort(_) => "series_too_short",
            CometError::InvalidConfig(_) => "invalid_config",
            CometError::InvalidSeries(_) => "invalid_series",
            CometError::Divergence(_) => "numeric_divergence",
            CometError::NoAnchors(_) => "no_anchors",
            CometError::BadMagic => "bad_magic",
            CometError::UnsupportedVersion { .. } => "version_mismatch",
            CometError::Truncated { .. } => "truncated_file",
            CometError::TrailingBytes { .. } => "trailing_data",
            CometError::MalformedModel(_) => "malformed_model",
            CometError::Parse { .. } => "malformed_csv",
            CometError::Io(_) => "io_error",
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, CometError::Divergence(_))
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FuzzError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported layer kind `{0}`")]
    UnsupportedLayer(String),

    #[error("truncated blob: {0}")]
    TruncatedBlob(String),

    #[error("model has no layers")]
    EmptyModel,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("batch element {index}: {source}")]
    BatchElement {
        index: usize,
        #[source]
        source: Box<FuzzError>,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("grid {rows}x{cols} does not fit image {height}x{width}")]
    GridTooLarge {
        rows: usize,
        cols: usize,
        height: usize,
        width: usize,
    },

    #[error("record does not match profile: {0}")]
    ProfileMismatch(String),

    #[error("node is fully expanded")]
    FullyExpanded,

    #[error("node at level {level} reached the depth cap {max}")]
    DepthExceeded { level: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FuzzError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FuzzError::Io {
            path: path.into(),
            source,
        }
    }
}

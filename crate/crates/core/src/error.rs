use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}` (expected {expected}, got {actual})")]
    Dimension { op: &'static str, axis: &'static str, expected: usize, actual: usize },

    #[error("{op}: invalid shape ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("parameter `{0}` has no gradient; run a backward pass first")]
    MissingGradient(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown object id {0}")]
    UnknownObject(u32),

    #[error("dataset is empty or unusable: {0}")]
    EmptyDataset(String),

    #[error("no feasible placement inside the valid region")]
    NoFeasiblePlacement,

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}

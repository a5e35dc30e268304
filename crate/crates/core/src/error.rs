use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to report the failing
/// quantity without holding references into caller data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize vector: norm {norm:e} is below 1e-12")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sigma must be finite and positive, got {sigma}")]
    InvalidSigma { sigma: f64 },

    #[error("input must not be empty")]
    EmptyInput,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("expected a unit vector, got norm {norm}")]
    NonUnitInput { norm: f64 },

    #[error("label vector has no positive entry")]
    NoPositiveLabel,

    #[error("class {class} has no unmasked samples")]
    EmptyClass { class: usize },

    #[error("dataset contains no samples")]
    EmptyDataset,

    #[error("retrieval index contains no rows")]
    EmptyIndex,

    #[error("ground truth contains a single class only")]
    SingleClassOnly,

    #[error("query has no positive labels under raw relevance")]
    NoPositiveQueryLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in stored model: {0}")]
    ShapeMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

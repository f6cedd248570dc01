use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("layer has no filters")]
    NotFiltered,
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}{}", layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    Divergence { epoch: usize, layer: Option<usize> },
    #[error("degenerate dropout rate {0}")]
    DegenerateRate(f64),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("model state: {0}")]
    ModelState(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("incompatible descriptors: {0}")]
    IncompatibleDescriptor(String),
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("invalid sample size: {0}")]
    InvalidSample(String),
    #[error("insufficient pairs: need at least {needed}, got {got}")]
    InsufficientPairs { needed: usize, got: usize },
    #[error("negative matching failed: {0}")]
    Matching(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported model version {found} (expected {expected})")]
    Version { found: String, expected: String },
    #[error("dimension inconsistency: {0}")]
    DimensionInconsistency(String),
    #[error("config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

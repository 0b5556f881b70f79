use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported image shape {height}x{width}x{channels}: {reason}")]
    UnsupportedImageShape {
        height: usize,
        width: usize,
        channels: usize,
        reason: String,
    },
    #[error("backend `{0}` is unavailable (pretrained weights not found)")]
    BackendUnavailable(String),
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("embedding cache is corrupt: {0}")]
    CacheCorrupt(String),
    #[error("word `{0}` is not in the lexicon")]
    WordNotInLexicon(String),
    #[error("no candidate prompt survived outlier filtering")]
    EmptyPositiveSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("negative variance {value} at entry {index}")]
    NegativeVariance { index: usize, value: f64 },
    #[error("non-finite loss at step {step}: total={total} mse={mse} vq={vq}")]
    NonFiniteLoss {
        step: usize,
        total: f64,
        mse: f64,
        vq: f64,
    },
    #[error("image set is empty")]
    EmptyImageSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("AUROC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClassInput { positives: usize, negatives: usize },
    #[error("anomalous test image {0} has no mask")]
    MissingMask(String),
    #[error("dataset layout violation: {0}")]
    LayoutViolation(String),
    #[error("anomalous image {0} has no ground-truth mask")]
    MaskMissing(PathBuf),
    #[error("need {needed} images, only {available} available")]
    InsufficientImages { needed: usize, available: usize },
    #[error("unknown augmentation strategy `{0}`")]
    UnknownStrategy(String),
    #[error("failed to decode image {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },
    #[error("run not found: {0}")]
    RunNotFound(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by inputs that violate a documented precondition, as
    /// opposed to internal or I/O failures.
    pub fn is_precondition(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Json(_) | Error::NonFiniteLoss { .. } | Error::CacheCorrupt(_)
        )
    }
}

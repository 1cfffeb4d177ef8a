use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown scene type '{0}'")]
    UnknownSceneType(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("{anchors} anchored nodes exceed the node budget of {budget}")]
    AnchorsExceedNodeBudget { anchors: usize, budget: usize },

    #[error("need at least {needed} feature vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("asset catalog has no usable category for '{0}'")]
    EmptyCategory(String),

    #[error("loss became non-finite at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("dataset not found at {0}")]
    MissingDataset(PathBuf),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("language model client error: {0}")]
    LlmClient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

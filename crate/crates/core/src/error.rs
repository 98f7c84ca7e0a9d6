//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("layout too small: {0}")]
    LayoutTooSmall(String),

    #[error("generation failed after {attempts} attempts (last sequence: {tokens:?})")]
    GenerationFailure { attempts: usize, tokens: Vec<u32> },

    #[error("training diverged at step {step} (lr {lr}): {message}")]
    Diverged { step: usize, lr: f64, message: String },

    #[error("cannot perturb: {0}")]
    CannotPerturb(String),

    #[error("no length-matched alternative: {0}")]
    NoAlternative(String),

    #[error("no distinct layout after {0} attempts")]
    NoDistinctLayout(usize),

    #[error("policy violation: {0}")]
    PolicyViolation(String),

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stage {stage} failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Errors caused by bad inputs or configuration rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::InvalidLayout(_)
                | Error::LayoutTooSmall(_)
                | Error::PolicyViolation(_)
                | Error::DataIntegrity(_)
                | Error::Json(_)
        )
    }
}

use aoi_core::RunTrace;
use thiserror::Error;

pub type Result<T, E = LearnerError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Core(#[from] aoi_core::Error),

    #[error("LfaDiverged: |theta|_inf = {norm:e} exceeds the bound at step {step}")]
    LfaDiverged {
        step: u64,
        norm: f64,
        /// Trace up to the failing step.
        trace: Box<RunTrace>,
    },

    #[error("DqnNumericFailure: {detail} (episode {episode}, step {step})")]
    DqnNumericFailure { episode: usize, step: u64, detail: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

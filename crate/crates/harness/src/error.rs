use aoi_core::Error as CoreError;
use aoi_learners::LearnerError;
use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Learner(#[from] LearnerError),

    #[error("io: {0}")]
    Io(String),

    #[error("{failed} of {total} runs failed; see the status column")]
    PartialFailure { failed: usize, total: usize },
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

/// Process exit codes by failure class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Command-line usage error (reported by the argument parser).
    pub const USAGE: i32 = 2;
    /// Scenario file or parameter validation failed.
    pub const CONFIG: i32 = 3;
    /// The workflow does not apply: state space too large or wrong protocol.
    pub const UNSUPPORTED: i32 = 4;
    /// A solver or learner failed numerically.
    pub const NUMERIC: i32 = 5;
    pub const IO: i32 = 6;
    /// The batch finished but some runs failed.
    pub const PARTIAL: i32 = 7;
}

impl LabError {
    /// Short failure class used in diagnostics and the status column.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            exit::CONFIG => "config",
            exit::UNSUPPORTED => "unsupported",
            exit::NUMERIC => "numeric",
            exit::IO => "io",
            exit::PARTIAL => "partial",
            _ => "error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Scenario(_) => exit::CONFIG,
            LabError::Io(_) => exit::IO,
            LabError::PartialFailure { .. } => exit::PARTIAL,
            LabError::Core(e) => core_code(e),
            LabError::Learner(e) => match e {
                LearnerError::Core(c) => core_code(c),
                LearnerError::Checkpoint(_) => exit::IO,
                LearnerError::ShapeMismatch { .. } => exit::CONFIG,
                LearnerError::LfaDiverged { .. } | LearnerError::DqnNumericFailure { .. } => exit::NUMERIC,
            },
        }
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidConfig(_)
        | CoreError::InvalidProtocol(_)
        | CoreError::Parse(_)
        | CoreError::ActionMasked { .. }
        | CoreError::StateNotInSpace(_)
        | CoreError::SpaceMismatch => exit::CONFIG,
        CoreError::WrongProtocol { .. } | CoreError::StateSpaceTooLarge { .. } | CoreError::ThresholdBelowBlockLength { .. } => {
            exit::UNSUPPORTED
        }
        CoreError::Io(_) => exit::IO,
        CoreError::RviDiverged { .. }
        | CoreError::NotUnichain { .. }
        | CoreError::StationaryNotConverged { .. }
        | CoreError::MixturePrecondition { .. }
        | CoreError::BracketFailure(_)
        | CoreError::EtaSearchFailed { .. } => exit::NUMERIC,
    }
}

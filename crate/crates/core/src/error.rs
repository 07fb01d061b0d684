use thiserror::Error;

use crate::model::Action;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("ActionMasked: action {action} is not valid in state {state}")]
    ActionMasked { action: Action, state: String },

    #[error("operation requires a {expected} protocol")]
    WrongProtocol { expected: &'static str },

    #[error(
        "StateSpaceTooLarge: {size} states exceed the cap of {cap}; use simulation-only workflows \
         (Whittle-index policies, UCRL2-Whittle, SARSA-LFA or DQN)"
    )]
    StateSpaceTooLarge { size: u128, cap: u128 },

    #[error("state {0} is not part of the enumerated state space")]
    StateNotInSpace(String),

    #[error("RviDiverged: no convergence after {sweeps} sweeps (last sup-norm change {residual:e})")]
    RviDiverged { sweeps: usize, residual: f64 },

    #[error("NotUnichain: policy induces {classes} recurrent classes; unreached from s0: {unreached:?}")]
    NotUnichain {
        classes: usize,
        /// Representative state indices of recurrent classes not reachable from the initial state.
        unreached: Vec<Vec<usize>>,
    },

    #[error("stationary distribution did not converge (residual {residual:e})")]
    StationaryNotConverged { residual: f64 },

    #[error("ThresholdBelowBlockLength: threshold {gamma} is below the block length {block_len}")]
    ThresholdBelowBlockLength { gamma: u32, block_len: u32 },

    #[error("mixture precondition violated: C(low) = {c_low}, C(high) = {c_high}, budget = {budget}")]
    MixturePrecondition { c_low: f64, c_high: f64, budget: f64 },

    #[error("policies are defined over different state spaces")]
    SpaceMismatch,

    #[error("bisection failed to bracket: {0}")]
    BracketFailure(String),

    #[error("eta search oscillated without a bracket after {iterations} iterations")]
    EtaSearchFailed { iterations: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

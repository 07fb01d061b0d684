//! Scheduling of status updates to multiple users over error-prone channels
//! under an average transmission budget.
//!
//! The crate covers the constrained MDP model for ARQ, general HARQ and
//! fixed-redundancy HARQ, exact planning by relative value iteration, Whittle
//! index policies with closed forms, baselines and analytic lower bounds.

pub mod bounds;
pub mod error;
pub mod evaluate;
pub mod index;
pub mod kernel;
pub mod lagrange;
pub mod mdp;
pub mod model;
pub mod policy_io;
pub mod rvi;
pub mod sim;
pub mod space;

pub use error::{Error, Result};
pub use kernel::{AoiModel, Step, Transition};
pub use model::{AckNack, Action, CostSample, Feedback, ModelConfig, ProtocolSpec, SystemState, UserState};
pub use sim::{rng_from_seed, simulate, Policy, RunTrace, SimRng};
pub use space::StateSpace;

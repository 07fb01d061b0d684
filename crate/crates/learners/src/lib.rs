//! Learning schedulers that do not know the channel error probabilities:
//! UCRL2-VI, UCRL2-Whittle, SARSA with linear function approximation and DQN.

pub mod checkpoint;
pub mod dqn;
pub mod error;
pub mod mlp;
pub mod sarsa;
pub mod ucrl2;

pub use error::{LearnerError, Result};

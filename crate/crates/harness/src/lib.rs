//! Experiment harness: scenario files, presets for the published figures,
//! parallel batch runs over seeds and reproducible CSV output.

pub mod error;
pub mod output;
pub mod presets;
pub mod runner;
pub mod scenario;

pub use error::{exit, LabError, Result};
pub use runner::{run_scenario, ResultRow, RunOutput};
pub use scenario::{Case, PolicyKind, Scenario};

//! Versioned JSON checkpoints of learner state.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dqn::DqnState;
use crate::error::{LearnerError, Result};
use crate::sarsa::SarsaLfaState;
use crate::ucrl2::UcrlState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerSnapshot {
    Ucrl2(UcrlState),
    SarsaLfa(SarsaLfaState),
    Dqn(Box<DqnState>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub snapshot: LearnerSnapshot,
}

impl Checkpoint {
    pub fn new(seed: u64, snapshot: LearnerSnapshot) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            seed,
            snapshot,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| LearnerError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| LearnerError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(LearnerError::Checkpoint(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| LearnerError::Checkpoint(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(self.to_json()?.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LearnerError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

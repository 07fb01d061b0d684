//! Tabular form of a model over an enumerated state space.

use std::sync::Arc;

use crate::error::Result;
use crate::kernel::{AoiModel, Branches, ErrorKey};
use crate::model::Action;
use crate::space::StateSpace;

/// One valid action of a state with its stage cost and successor slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: Action,
    /// Weighted AoI summed over the slots the action occupies.
    pub aoi_cost: f64,
    /// Transmission slots used.
    pub tx_slots: f64,
    /// Slots the action occupies.
    pub duration: f64,
    /// Attempt parameter; `None` for idle.
    pub key: Option<ErrorKey>,
    start: u32,
    len: u32,
}

impl Choice {
    pub fn outcome_range(&self) -> std::ops::Range<usize> {
        self.start as usize..(self.start + self.len) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: u32,
    pub prob: f64,
    /// `true` for the success branch of an attempt (and for idle).
    pub success: bool,
}

/// CSR layout: states own contiguous choices, choices own contiguous outcomes.
/// Probabilities can be replaced in place, which is how learners build
/// estimated models without re-enumerating.
#[derive(Debug, Clone)]
pub struct CompiledMdp {
    space: Arc<StateSpace>,
    users: usize,
    choice_start: Vec<u32>,
    choices: Vec<Choice>,
    outcomes: Vec<Outcome>,
    initial: usize,
}

impl CompiledMdp {
    pub fn compile(model: &AoiModel) -> Result<Self> {
        Self::compile_in(model, StateSpace::enumerate(model)?)
    }

    /// Compiles `model` over a given space. Every successor must lie in the space.
    pub fn compile_in(model: &AoiModel, space: StateSpace) -> Result<Self> {
        let mut choice_start = Vec::with_capacity(space.len() + 1);
        let mut choices = Vec::new();
        let mut outcomes = Vec::new();
        for s in space.states() {
            choice_start.push(choices.len() as u32);
            for action in model.valid_actions(s) {
                let cost = model.stage_cost(s, action);
                let start = outcomes.len() as u32;
                let key = match model.branches(s, action)? {
                    Branches::Certain(next) => {
                        outcomes.push(Outcome {
                            next: space.index_of(&next)? as u32,
                            prob: 1.0,
                            success: true,
                        });
                        None
                    }
                    Branches::Attempt {
                        key,
                        success,
                        failure,
                    } => {
                        let p = model.error_prob(key);
                        outcomes.push(Outcome {
                            next: space.index_of(&success)? as u32,
                            prob: 1.0 - p,
                            success: true,
                        });
                        outcomes.push(Outcome {
                            next: space.index_of(&failure)? as u32,
                            prob: p,
                            success: false,
                        });
                        Some(key)
                    }
                };
                choices.push(Choice {
                    action,
                    aoi_cost: cost.aoi_cost,
                    tx_slots: cost.tx_cost,
                    duration: f64::from(model.duration(action)),
                    key,
                    start,
                    len: outcomes.len() as u32 - start,
                });
            }
        }
        choice_start.push(choices.len() as u32);
        let initial = space.index_of(&space.canonical(model.initial_state()))?;
        Ok(Self {
            space: Arc::new(space),
            users: model.users(),
            choice_start,
            choices,
            outcomes,
            initial,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn shared_space(&self) -> Arc<StateSpace> {
        Arc::clone(&self.space)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    /// Index of the initial state.
    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn choices(&self, state: usize) -> &[Choice] {
        let a = self.choice_start[state] as usize;
        let b = self.choice_start[state + 1] as usize;
        &self.choices[a..b]
    }

    /// Global index of the first choice of `state`.
    pub fn choice_offset(&self, state: usize) -> usize {
        self.choice_start[state] as usize
    }

    pub fn outcomes(&self, choice: &Choice) -> &[Outcome] {
        &self.outcomes[choice.outcome_range()]
    }

    /// Position of `action` among the choices of `state`.
    pub fn choice_of(&self, state: usize, action: Action) -> Option<usize> {
        self.choices(state).iter().position(|c| c.action == action)
    }

    /// Replaces every attempt's error probability by `error(key)`.
    pub fn reweight(&mut self, mut error: impl FnMut(ErrorKey) -> f64) {
        for c in &self.choices {
            if let Some(key) = c.key {
                let p = error(key);
                let r = c.outcome_range();
                for o in &mut self.outcomes[r] {
                    o.prob = if o.success { 1.0 - p } else { p };
                }
            }
        }
    }

    /// Expected value of `v` after taking `choice`.
    #[inline]
    pub fn expect(&self, choice: &Choice, v: &[f64]) -> f64 {
        self.outcomes[choice.outcome_range()]
            .iter()
            .map(|o| o.prob * v[o.next as usize])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ProtocolSpec};

    #[test]
    fn rows_are_stochastic() {
        let cfg = ModelConfig::uniform(2, 5, 2, 1.0).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::harq_geometric(&[0.6, 0.3], 0.5, 2)).unwrap();
        let mdp = CompiledMdp::compile(&m).unwrap();
        for s in 0..mdp.num_states() {
            for c in mdp.choices(s) {
                let total: f64 = mdp.outcomes(c).iter().map(|o| o.prob).sum();
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn reweight_replaces_probabilities() {
        let cfg = ModelConfig::uniform(2, 4, 0, 1.0).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![0.2, 0.4] }).unwrap();
        let mut mdp = CompiledMdp::compile(&m).unwrap();
        mdp.reweight(|k| if k.user == 0 { 0.9 } else { 0.0 });
        let c = &mdp.choices(0)[1];
        assert_eq!(c.action, Action::New(0));
        let probs: Vec<f64> = mdp.outcomes(c).iter().map(|o| o.prob).collect();
        assert!((probs[0] - 0.1).abs() < 1e-15 && probs[1] == 0.9);
    }
}

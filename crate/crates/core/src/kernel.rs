//! Transition kernel, costs and sampled steps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{AckNack, Action, CostSample, Feedback, ModelConfig, ProtocolSpec, SystemState, UserState};

/// Which error probability drives a transmit outcome: user and retransmission
/// count of the attempt (always 0 for fresh packets and non-HARQ protocols).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ErrorKey {
    pub user: usize,
    pub retx: u32,
}

/// Successor states of one `(state, action)` pair before probabilities are attached.
#[derive(Debug, Clone, PartialEq)]
pub enum Branches {
    Certain(SystemState),
    Attempt {
        key: ErrorKey,
        success: SystemState,
        failure: SystemState,
    },
}

/// A successor with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: SystemState,
    pub prob: f64,
    pub outcome: Option<AckNack>,
}

/// Result of one sampled decision epoch. For FR HARQ pulls this spans
/// `block_len` slots and `cost` sums the per-slot accruals.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: SystemState,
    pub feedback: Feedback,
    pub cost: CostSample,
    pub slots: u32,
}

/// Outcome of [`AoiModel::fr_block_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStep {
    pub next: SystemState,
    pub feedback: Feedback,
    /// Weighted AoI charged in each elapsed slot.
    pub accruals: Vec<f64>,
    pub slots: u32,
}

/// A validated model: configuration plus protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiModel {
    config: ModelConfig,
    protocol: ProtocolSpec,
    max_retx: u32,
    block_len: u32,
}

impl AoiModel {
    /// Builds a model of a physical channel (error probabilities in `(0, 1)`,
    /// `0` admitted as a limit).
    pub fn new(config: ModelConfig, protocol: ProtocolSpec) -> Result<Self> {
        Self::build(config, protocol, true)
    }

    /// Like [`AoiModel::new`] but admits error probabilities in `[0, 1]` and
    /// non-monotone HARQ profiles. Used for estimated and optimistic models.
    pub fn new_relaxed(config: ModelConfig, protocol: ProtocolSpec) -> Result<Self> {
        Self::build(config, protocol, false)
    }

    fn build(config: ModelConfig, protocol: ProtocolSpec, strict: bool) -> Result<Self> {
        config.validate()?;
        protocol.validate(&config, strict)?;
        let max_retx = protocol.effective_max_retx(&config);
        let block_len = protocol.block_len();
        Ok(Self {
            config,
            protocol,
            max_retx,
            block_len,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn protocol(&self) -> &ProtocolSpec {
        &self.protocol
    }

    pub fn users(&self) -> usize {
        self.config.users
    }

    pub fn max_age(&self) -> u32 {
        self.config.max_age
    }

    /// Retransmission count tracked in the state (0 unless HARQ).
    pub fn max_retx(&self) -> u32 {
        self.max_retx
    }

    pub fn block_len(&self) -> u32 {
        self.block_len
    }

    pub fn is_harq(&self) -> bool {
        matches!(self.protocol, ProtocolSpec::GeneralHarq { .. })
    }

    pub fn is_fr(&self) -> bool {
        matches!(self.protocol, ProtocolSpec::FrHarq { .. })
    }

    /// Same model with the error probabilities replaced (relaxed validation).
    pub fn with_protocol(&self, protocol: ProtocolSpec) -> Result<Self> {
        Self::new_relaxed(self.config.clone(), protocol)
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Ok(Self {
            config: self.config.clone().with_budget(budget)?,
            ..self.clone()
        })
    }

    pub fn initial_state(&self) -> &SystemState {
        &self.config.initial_state
    }

    pub fn is_valid(&self, state: &SystemState, action: Action) -> bool {
        match action {
            Action::Idle => true,
            Action::New(j) => j < self.users(),
            Action::Retransmit(j) => {
                self.is_harq() && j < self.users() && state.users[j].retx >= 1
            }
        }
    }

    /// Valid actions in the fixed order `Idle, New(..), Retransmit(..)`.
    pub fn valid_actions(&self, state: &SystemState) -> Vec<Action> {
        Action::all(self.users())
            .filter(|&a| self.is_valid(state, a))
            .collect()
    }

    /// Slots consumed by `action`.
    pub fn duration(&self, action: Action) -> u32 {
        if action.is_transmission() {
            self.block_len
        } else {
            1
        }
    }

    /// Cost charged for `action` in `state`, summed over the slots it occupies.
    pub fn stage_cost(&self, state: &SystemState, action: Action) -> CostSample {
        let slots = self.duration(action);
        let n = self.config.max_age;
        let aoi_cost = if slots == 1 {
            state.weighted_age(&self.config.weights)
        } else {
            state
                .users
                .iter()
                .zip(&self.config.weights)
                .map(|(u, w)| w * (0..slots).map(|k| f64::from((u.rx + k).min(n))).sum::<f64>())
                .sum()
        };
        let tx_cost = if action.is_transmission() {
            f64::from(slots)
        } else {
            0.0
        };
        CostSample { aoi_cost, tx_cost }
    }

    fn check(&self, state: &SystemState, action: Action) -> Result<()> {
        if self.is_valid(state, action) {
            Ok(())
        } else {
            Err(Error::ActionMasked {
                action,
                state: state.to_string(),
            })
        }
    }

    fn aged(&self, u: UserState, slots: u32) -> UserState {
        let n = self.config.max_age;
        UserState {
            rx: (u.rx + slots).min(n),
            tx: (u.tx + slots).min(n),
            retx: u.retx,
        }
    }

    fn all_aged(&self, state: &SystemState, slots: u32) -> SystemState {
        SystemState::new(state.users.iter().map(|&u| self.aged(u, slots)).collect())
    }

    /// Successor states of `(state, action)` without probabilities.
    pub fn branches(&self, state: &SystemState, action: Action) -> Result<Branches> {
        self.check(state, action)?;
        let n = self.config.max_age;
        let slots = self.duration(action);
        let base = self.all_aged(state, slots);
        let (j, retx) = match action {
            Action::Idle => return Ok(Branches::Certain(base)),
            Action::New(j) => (j, 0),
            Action::Retransmit(j) => (j, state.users[j].retx),
        };
        let key = ErrorKey { user: j, retx };
        let old = state.users[j];
        let mut success = base.clone();
        let mut failure = base;
        if self.is_fr() {
            // A pull carries a freshly generated update that is n_s slots old on delivery.
            success.users[j] = UserState::new(slots, slots, 0);
            failure.users[j].tx = slots;
        } else {
            match action {
                Action::New(_) => {
                    success.users[j] = UserState::new(1, 1, 0);
                    failure.users[j].tx = 1;
                    failure.users[j].retx = 1.min(self.max_retx);
                }
                _ => {
                    let tx = (old.tx + 1).min(n);
                    success.users[j] = UserState::new(tx, tx, 0);
                    failure.users[j].retx = (old.retx + 1).min(self.max_retx);
                }
            }
        }
        Ok(Branches::Attempt {
            key,
            success,
            failure,
        })
    }

    /// Error probability of the attempt identified by `key`.
    pub fn error_prob(&self, key: ErrorKey) -> f64 {
        self.protocol.error_prob(key.user, key.retx)
    }

    /// Successor distribution of `(state, action)`. Zero-probability outcomes
    /// are dropped; idle has a single support point.
    pub fn transitions(&self, state: &SystemState, action: Action) -> Result<Vec<Transition>> {
        Ok(match self.branches(state, action)? {
            Branches::Certain(next) => vec![Transition {
                next,
                prob: 1.0,
                outcome: None,
            }],
            Branches::Attempt {
                key,
                success,
                failure,
            } => {
                let p = self.error_prob(key);
                let mut out = Vec::with_capacity(2);
                if p < 1.0 {
                    out.push(Transition {
                        next: success,
                        prob: 1.0 - p,
                        outcome: Some(AckNack::Ack),
                    });
                }
                if p > 0.0 {
                    out.push(Transition {
                        next: failure,
                        prob: p,
                        outcome: Some(AckNack::Nack),
                    });
                }
                out
            }
        })
    }

    /// Samples one decision epoch. Cost is charged on the current state.
    pub fn step<R: Rng + ?Sized>(&self, state: &SystemState, action: Action, rng: &mut R) -> Result<Step> {
        let cost = self.stage_cost(state, action);
        let slots = self.duration(action);
        let (next, feedback) = match self.branches(state, action)? {
            Branches::Certain(next) => (next, Feedback::NONE),
            Branches::Attempt {
                key,
                success,
                failure,
            } => {
                let failed = rng.random::<f64>() < self.error_prob(key);
                let feedback = Feedback {
                    outcome: Some(if failed { AckNack::Nack } else { AckNack::Ack }),
                    target: Some(key.user),
                };
                (if failed { failure } else { success }, feedback)
            }
        };
        Ok(Step {
            next,
            feedback,
            cost,
            slots,
        })
    }

    /// One FR HARQ decision: pull `target` for `n_s` slots or idle for one slot.
    pub fn fr_block_step<R: Rng + ?Sized>(
        &self,
        state: &SystemState,
        target: Option<usize>,
        rng: &mut R,
    ) -> Result<BlockStep> {
        if !self.is_fr() {
            return Err(Error::WrongProtocol { expected: "fr" });
        }
        let action = target.map_or(Action::Idle, Action::New);
        let step = self.step(state, action, rng)?;
        let n = self.config.max_age;
        let accruals = (0..step.slots)
            .map(|k| {
                state
                    .users
                    .iter()
                    .zip(&self.config.weights)
                    .map(|(u, w)| w * f64::from((u.rx + k).min(n)))
                    .sum()
            })
            .collect();
        Ok(BlockStep {
            next: step.next,
            feedback: step.feedback,
            accruals,
            slots: step.slots,
        })
    }
}

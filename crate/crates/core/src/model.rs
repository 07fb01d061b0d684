//! Domain types of the multi-user status-update system: configuration,
//! channel/protocol description, per-user state, actions, feedback and costs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::fr_error_prob;

/// Age, transmitter age and retransmission count of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserState {
    /// Age of information at the receiver, in slots (1..=N).
    pub rx: u32,
    /// Age of the most recently transmitted packet at the source (1..=N).
    pub tx: u32,
    /// Number of previous attempts of the pending packet (0 = fresh).
    pub retx: u32,
}

impl UserState {
    pub const fn new(rx: u32, tx: u32, retx: u32) -> Self {
        Self { rx, tx, retx }
    }
}

/// Joint state of all users.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub users: Vec<UserState>,
}

impl SystemState {
    pub fn new(users: Vec<UserState>) -> Self {
        Self { users }
    }

    /// Receiver ages only; transmitter ages set to 1 and no pending retransmissions.
    pub fn from_ages(ages: &[u32]) -> Self {
        Self {
            users: ages.iter().map(|&rx| UserState::new(rx, 1, 0)).collect(),
        }
    }

    pub fn ages(&self) -> Vec<u32> {
        self.users.iter().map(|u| u.rx).collect()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Weighted sum of receiver ages.
    pub fn weighted_age(&self, weights: &[f64]) -> f64 {
        self.users
            .iter()
            .zip(weights)
            .map(|(u, w)| w * f64::from(u.rx))
            .sum()
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, u) in self.users.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{},{},{}", u.rx, u.tx, u.retx)?;
        }
        write!(f, ")")
    }
}

/// Scheduler decision for one slot. User indices are zero-based; the textual
/// form (`i`, `n1`, `x1`, ...) is one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Idle,
    New(usize),
    Retransmit(usize),
}

impl Action {
    /// Position in the fixed action order `Idle, New(0..M), Retransmit(0..M)`.
    /// Also the tie-breaking order of all planners.
    pub fn index(self, users: usize) -> usize {
        match self {
            Action::Idle => 0,
            Action::New(j) => 1 + j,
            Action::Retransmit(j) => 1 + users + j,
        }
    }

    pub fn from_index(index: usize, users: usize) -> Option<Self> {
        match index {
            0 => Some(Action::Idle),
            i if i <= users => Some(Action::New(i - 1)),
            i if i <= 2 * users => Some(Action::Retransmit(i - 1 - users)),
            _ => None,
        }
    }

    /// Number of actions `2M + 1`.
    pub fn count(users: usize) -> usize {
        2 * users + 1
    }

    pub fn all(users: usize) -> impl Iterator<Item = Action> {
        (0..Self::count(users)).filter_map(move |i| Self::from_index(i, users))
    }

    pub fn target(self) -> Option<usize> {
        match self {
            Action::Idle => None,
            Action::New(j) | Action::Retransmit(j) => Some(j),
        }
    }

    pub fn is_transmission(self) -> bool {
        !matches!(self, Action::Idle)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Idle => write!(f, "i"),
            Action::New(j) => write!(f, "n{}", j + 1),
            Action::Retransmit(j) => write!(f, "x{}", j + 1),
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "i" {
            return Ok(Action::Idle);
        }
        let parse_user = |rest: &str| -> Result<usize> {
            match rest.parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j - 1),
                _ => Err(Error::Parse(format!("bad action '{s}'"))),
            }
        };
        if let Some(rest) = s.strip_prefix('n') {
            Ok(Action::New(parse_user(rest)?))
        } else if let Some(rest) = s.strip_prefix('x') {
            Ok(Action::Retransmit(parse_user(rest)?))
        } else {
            Err(Error::Parse(format!("bad action '{s}'")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AckNack {
    Ack,
    Nack,
}

/// Receiver feedback after a slot. Both fields are `None` iff the source idled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Feedback {
    pub outcome: Option<AckNack>,
    pub target: Option<usize>,
}

impl Feedback {
    pub const NONE: Feedback = Feedback {
        outcome: None,
        target: None,
    };

    pub fn is_ack(&self) -> bool {
        self.outcome == Some(AckNack::Ack)
    }
}

/// Per-slot costs: weighted AoI and transmission indicator. For multi-slot
/// blocks (FR HARQ) these are sums over the block's slots.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSample {
    pub aoi_cost: f64,
    pub tx_cost: f64,
}

/// Channel and retransmission protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolSpec {
    /// Failed packets are dropped; `error[j]` is the per-attempt error of user `j`.
    StandardArq { error: Vec<f64> },
    /// `error[j][r]` is the decoding error of user `j` after `r` previous attempts, `r = 0..=r_max`.
    GeneralHarq { error: Vec<Vec<f64>> },
    /// `(n_s, k_s)` MDS-coded blocks with per-symbol erasure probabilities.
    FrHarq {
        block_len: u32,
        info_len: u32,
        symbol_error: Vec<f64>,
    },
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::StandardArq { .. } => "arq",
            ProtocolSpec::GeneralHarq { .. } => "harq",
            ProtocolSpec::FrHarq { .. } => "fr",
        }
    }

    pub fn users(&self) -> usize {
        match self {
            ProtocolSpec::StandardArq { error } => error.len(),
            ProtocolSpec::GeneralHarq { error } => error.len(),
            ProtocolSpec::FrHarq { symbol_error, .. } => symbol_error.len(),
        }
    }

    /// Exponentially decaying HARQ profile `g_j(r) = base_j * factor^r`.
    pub fn harq_geometric(base: &[f64], factor: f64, max_retx: u32) -> Self {
        ProtocolSpec::GeneralHarq {
            error: base
                .iter()
                .map(|b| (0..=max_retx).map(|r| b * factor.powi(r as i32)).collect())
                .collect(),
        }
    }

    /// Retransmission count actually tracked by the kernel: 0 unless HARQ.
    pub fn effective_max_retx(&self, config: &ModelConfig) -> u32 {
        match self {
            ProtocolSpec::GeneralHarq { .. } => config.max_retx,
            _ => 0,
        }
    }

    pub fn block_len(&self) -> u32 {
        match self {
            ProtocolSpec::FrHarq { block_len, .. } => *block_len,
            _ => 1,
        }
    }

    /// Error probability of an attempt to `user` whose pending packet has `retx`
    /// previous attempts. For FR HARQ this is the block error of a full pull.
    pub fn error_prob(&self, user: usize, retx: u32) -> f64 {
        match self {
            ProtocolSpec::StandardArq { error } => error[user],
            ProtocolSpec::GeneralHarq { error } => {
                let row = &error[user];
                row[(retx as usize).min(row.len() - 1)]
            }
            ProtocolSpec::FrHarq {
                block_len,
                info_len,
                symbol_error,
            } => fr_error_prob(*block_len, *info_len, symbol_error[user]),
        }
    }

    /// Block error probabilities of all users (FR HARQ), or the fresh-packet
    /// error otherwise.
    pub fn fresh_errors(&self) -> Vec<f64> {
        (0..self.users()).map(|j| self.error_prob(j, 0)).collect()
    }

    /// Checks probability ranges. `strict` enforces the open interval and the
    /// monotone HARQ profile of a physical channel; learners build optimistic
    /// models with `strict = false`, which admits `[0, 1]`.
    pub fn validate(&self, config: &ModelConfig, strict: bool) -> Result<()> {
        let m = config.users;
        if self.users() != m {
            return Err(Error::InvalidProtocol(format!(
                "protocol describes {} users, config has {m}",
                self.users()
            )));
        }
        let check = |what: &str, p: f64| -> Result<()> {
            let ok = if strict {
                (0.0..1.0).contains(&p)
            } else {
                (0.0..=1.0).contains(&p)
            };
            if ok && p.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidProtocol(format!("{what} = {p} out of range")))
            }
        };
        match self {
            ProtocolSpec::StandardArq { error } => {
                for (j, &p) in error.iter().enumerate() {
                    check(&format!("p_{}", j + 1), p)?;
                }
            }
            ProtocolSpec::GeneralHarq { error } => {
                for (j, row) in error.iter().enumerate() {
                    if row.len() != config.max_retx as usize + 1 {
                        return Err(Error::InvalidProtocol(format!(
                            "g_{} has {} entries, expected r_max + 1 = {}",
                            j + 1,
                            row.len(),
                            config.max_retx + 1
                        )));
                    }
                    for (r, &g) in row.iter().enumerate() {
                        check(&format!("g_{}({r})", j + 1), g)?;
                    }
                    if strict && row.windows(2).any(|w| w[1] > w[0]) {
                        return Err(Error::InvalidProtocol(format!(
                            "g_{} must be non-increasing in r",
                            j + 1
                        )));
                    }
                }
            }
            ProtocolSpec::FrHarq {
                block_len,
                info_len,
                symbol_error,
            } => {
                if *info_len < 1 || info_len > block_len {
                    return Err(Error::InvalidProtocol(format!(
                        "need 1 <= k_s <= n_s, got (n_s, k_s) = ({block_len}, {info_len})"
                    )));
                }
                if *block_len >= config.max_age {
                    return Err(Error::InvalidProtocol(format!(
                        "block length {block_len} must be below the maximum age {}",
                        config.max_age
                    )));
                }
                for (j, &p) in symbol_error.iter().enumerate() {
                    check(&format!("p_s,{}", j + 1), p)?;
                    check(&format!("p_FR,{}", j + 1), self.error_prob(j, 0))?;
                }
            }
        }
        Ok(())
    }
}

/// Problem dimensions, user weights and transmission budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of users `M`.
    pub users: usize,
    /// Maximum tracked age `N`.
    pub max_age: u32,
    /// Maximum tracked retransmission count `r_max`.
    pub max_retx: u32,
    pub weights: Vec<f64>,
    /// Average transmission budget `lambda` in (0, 1].
    pub budget: f64,
    pub initial_state: SystemState,
}

impl ModelConfig {
    pub fn new(weights: Vec<f64>, max_age: u32, max_retx: u32, budget: f64) -> Result<Self> {
        let users = weights.len();
        let initial_state = Self::default_initial_state(users, max_age);
        let cfg = Self {
            users,
            max_age,
            max_retx,
            weights,
            budget,
            initial_state,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `M` users of unit weight.
    pub fn uniform(users: usize, max_age: u32, max_retx: u32, budget: f64) -> Result<Self> {
        Self::new(vec![1.0; users], max_age, max_retx, budget)
    }

    /// `(j, 1, 0)` for user `j = 1..M`, ages clamped to `N`.
    pub fn default_initial_state(users: usize, max_age: u32) -> SystemState {
        SystemState::new(
            (1..=users as u32)
                .map(|j| UserState::new(j.min(max_age), 1, 0))
                .collect(),
        )
    }

    pub fn with_initial_state(mut self, state: SystemState) -> Result<Self> {
        self.initial_state = state;
        self.validate()?;
        Ok(self)
    }

    pub fn with_budget(mut self, budget: f64) -> Result<Self> {
        self.budget = budget;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users < 1 {
            return Err(Error::InvalidConfig("need at least one user".into()));
        }
        if self.max_age < 2 {
            return Err(Error::InvalidConfig("maximum age N must be >= 2".into()));
        }
        if self.weights.len() != self.users {
            return Err(Error::InvalidConfig("one weight per user required".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(format!("weights must be positive, got {w}")));
        }
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "budget lambda must lie in (0, 1], got {}",
                self.budget
            )));
        }
        self.check_state(&self.initial_state)
    }

    /// Range check of a state against `N` and `r_max`.
    pub fn check_state(&self, state: &SystemState) -> Result<()> {
        if state.len() != self.users {
            return Err(Error::InvalidConfig(format!(
                "state {state} has {} users, expected {}",
                state.len(),
                self.users
            )));
        }
        for u in &state.users {
            if u.rx < 1 || u.rx > self.max_age || u.tx < 1 || u.tx > self.max_age {
                return Err(Error::InvalidConfig(format!("ages of {state} outside [1, N]")));
            }
            if u.retx > self.max_retx {
                return Err(Error::InvalidConfig(format!(
                    "retransmission count of {state} exceeds r_max"
                )));
            }
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

//! Average-cost SARSA with linear function approximation and Boltzmann
//! exploration over the valid actions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use aoi_core::kernel::AoiModel;
use aoi_core::model::{Action, ModelConfig, SystemState};
use aoi_core::sim::{rng_from_seed, SimRng, StepRecord, ENV_STREAM, POLICY_STREAM};
use aoi_core::{Error, RunTrace};

use crate::error::{LearnerError, Result};

/// Step size `a / (1 + t / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub scale: f64,
    pub tau: f64,
}

impl Harmonic {
    pub fn at(&self, t: u64) -> f64 {
        self.scale / (1.0 + t as f64 / self.tau)
    }
}

/// Boltzmann temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Temperature {
    Constant { value: f64 },
    /// `max(floor, 1 / (1 + t / tau))`.
    Annealed { floor: f64, tau: f64 },
}

impl Temperature {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            Temperature::Constant { value } => value,
            Temperature::Annealed { floor, tau } => (1.0 / (1.0 + t as f64 / tau)).max(floor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SarsaConfig {
    pub lambda: f64,
    pub eta_init: f64,
    /// Step size of `theta`.
    pub alpha: Harmonic,
    /// Step size of the gain estimate.
    pub beta: Harmonic,
    /// Step size of the multiplier.
    pub gamma: Harmonic,
    pub temperature: Temperature,
    /// `|theta|_inf` above this halts the run.
    pub theta_bound: f64,
    /// Decisions to run.
    pub horizon: u64,
    pub keep_records: bool,
}

impl Default for SarsaConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eta_init: 0.0,
            alpha: Harmonic { scale: 0.05, tau: 1e4 },
            beta: Harmonic { scale: 0.01, tau: 1e4 },
            gamma: Harmonic { scale: 1.0, tau: 1e3 },
            temperature: Temperature::Annealed { floor: 0.05, tau: 1e3 },
            theta_bound: 1e6,
            horizon: 10_000,
            keep_records: false,
        }
    }
}

/// Width of one action block: bias plus three features per user.
pub fn block_width(users: usize) -> usize {
    3 * users + 1
}

/// `(3M + 1)(2M + 1)`.
pub fn feature_dim(users: usize) -> usize {
    block_width(users) * Action::count(users)
}

/// Writes the feature block of `state` (bias, `w delta_rx / N`, `delta_tx / N`,
/// `r / r_max`) into `out`.
pub fn feature_block(state: &SystemState, config: &ModelConfig, out: &mut [f64]) {
    let m = state.len();
    let n = f64::from(config.max_age);
    let r_max = f64::from(config.max_retx.max(1));
    out[0] = 1.0;
    for (j, u) in state.users.iter().enumerate() {
        out[1 + j] = config.weights[j] * f64::from(u.rx) / n;
        out[1 + m + j] = f64::from(u.tx) / n;
        out[1 + 2 * m + j] = f64::from(u.retx) / r_max;
    }
}

/// Full feature vector `phi(s, a)`: the block sits at the action's slot, zeros elsewhere.
pub fn features(state: &SystemState, action: Action, config: &ModelConfig) -> Vec<f64> {
    let m = state.len();
    let w = block_width(m);
    let mut phi = vec![0.0; feature_dim(m)];
    let off = action.index(m) * w;
    feature_block(state, config, &mut phi[off..off + w]);
    phi
}

/// `theta^T phi(s, a)` from a precomputed block.
pub fn preference(theta: &[f64], block: &[f64], action: Action, users: usize) -> f64 {
    let w = block.len();
    let off = action.index(users) * w;
    theta[off..off + w].iter().zip(block).map(|(t, f)| t * f).sum()
}

/// Probabilities `exp(-q / T) / sum` with max-subtraction.
pub fn boltzmann_probs(prefs: &[f64], temperature: f64) -> Vec<f64> {
    let lo = prefs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = prefs.iter().map(|&q| (-(q - lo) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Samples from the Boltzmann distribution over `actions`.
pub fn boltzmann_sample<R: Rng + ?Sized>(actions: &[Action], prefs: &[f64], temperature: f64, rng: &mut R) -> Action {
    let p = boltzmann_probs(prefs, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &pa) in actions.iter().zip(&p) {
        acc += pa;
        if u < acc {
            return *a;
        }
    }
    *actions.last().expect("at least one valid action")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarsaLfaState {
    pub theta: Vec<f64>,
    /// Gain estimate `J_eta`.
    pub gain: f64,
    pub eta: f64,
    /// Decisions taken.
    pub t: u64,
    pub slots: u64,
    pub transmissions: f64,
}

impl SarsaLfaState {
    pub fn new(users: usize, eta: f64) -> Self {
        Self {
            theta: vec![0.0; feature_dim(users)],
            gain: 0.0,
            eta,
            t: 0,
            slots: 0,
            transmissions: 0.0,
        }
    }

    /// Running transmission rate `C_eta`.
    pub fn tx_rate(&self) -> f64 {
        self.transmissions / self.slots.max(1) as f64
    }
}

pub struct SarsaAgent<'a> {
    model: &'a AoiModel,
    pub cfg: SarsaConfig,
    pub state: SarsaLfaState,
    block: Vec<f64>,
}

impl<'a> SarsaAgent<'a> {
    pub fn new(model: &'a AoiModel, cfg: SarsaConfig) -> Result<Self> {
        if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!("budget {} outside (0, 1]", cfg.lambda)).into());
        }
        let m = model.users();
        Ok(Self {
            model,
            state: SarsaLfaState::new(m, cfg.eta_init),
            cfg,
            block: vec![0.0; block_width(m)],
        })
    }

    fn prefs(&mut self, s: &SystemState, actions: &[Action]) -> Vec<f64> {
        feature_block(s, self.model.config(), &mut self.block);
        let m = self.model.users();
        actions
            .iter()
            .map(|&a| preference(&self.state.theta, &self.block, a, m))
            .collect()
    }

    /// Boltzmann action at the current temperature.
    pub fn act(&mut self, s: &SystemState, rng: &mut SimRng) -> Action {
        let actions = self.model.valid_actions(s);
        let prefs = self.prefs(s, &actions);
        boltzmann_sample(&actions, &prefs, self.cfg.temperature.at(self.state.t), rng)
    }

    /// One SARSA update for `(s, a, cost, slots, s', a')`.
    pub fn update(&mut self, s: &SystemState, a: Action, cost: f64, tx: f64, slots: u32, s2: &SystemState, a2: Action) {
        let m = self.model.users();
        let st = &mut self.state;
        st.t += 1;
        st.slots += u64::from(slots);
        st.transmissions += tx;
        let t = st.t;
        let w = block_width(m);
        feature_block(s2, self.model.config(), &mut self.block);
        let q_next = preference(&st.theta, &self.block, a2, m);
        feature_block(s, self.model.config(), &mut self.block);
        let q = preference(&st.theta, &self.block, a, m);
        let c = cost + st.eta * tx;
        let td = c - st.gain * f64::from(slots) + q_next - q;
        let step = self.cfg.alpha.at(t);
        let off = a.index(m) * w;
        for (th, f) in st.theta[off..off + w].iter_mut().zip(&self.block) {
            *th += step * td * f;
        }
        st.gain += self.cfg.beta.at(t) * (c / f64::from(slots) - st.gain);
        st.eta = (st.eta + self.cfg.gamma.at(t) * (st.tx_rate() - self.cfg.lambda)).max(0.0);
    }

    pub fn theta_norm(&self) -> f64 {
        self.state.theta.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct SarsaRun {
    pub trace: RunTrace,
    pub state: SarsaLfaState,
}

/// Runs SARSA-LFA for `cfg.horizon` decisions from the initial state.
pub fn sarsa_lfa_run(model: &AoiModel, cfg: &SarsaConfig, seed: u64) -> Result<SarsaRun> {
    let mut env = rng_from_seed(seed, ENV_STREAM);
    let mut pol = rng_from_seed(seed, POLICY_STREAM);
    let mut agent = SarsaAgent::new(model, cfg.clone())?;
    let mut trace = RunTrace::new(seed);
    let mut s = model.initial_state().clone();
    let mut a = agent.act(&s, &mut pol);
    for _ in 0..cfg.horizon {
        let step = model.step(&s, a, &mut env)?;
        let a2 = agent.act(&step.next, &mut pol);
        agent.update(&s, a, step.cost.aoi_cost, step.cost.tx_cost, step.slots, &step.next, a2);
        trace.push(
            StepRecord {
                state: s,
                action: a,
                feedback: step.feedback,
                cost: step.cost,
                slots: step.slots,
            },
            cfg.keep_records,
        );
        s = step.next;
        a = a2;
        let norm = agent.theta_norm();
        if !(norm <= cfg.theta_bound) {
            trace.final_state = Some(s);
            return Err(LearnerError::LfaDiverged {
                step: agent.state.t,
                norm,
                trace: Box::new(trace),
            });
        }
    }
    trace.final_state = Some(s);
    Ok(SarsaRun {
        trace,
        state: agent.state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use aoi_core::model::{ProtocolSpec, UserState};
    use proptest::prelude::*;

    #[test]
    fn dimension() {
        assert_eq!(feature_dim(3), 70);
        assert_eq!(feature_dim(1), 12);
    }

    #[test]
    fn single_user_block() {
        let cfg = ModelConfig::uniform(1, 10, 0, 1.0).unwrap();
        let s = SystemState::new(vec![UserState::new(2, 1, 0)]);
        let phi = features(&s, Action::New(0), &cfg);
        assert_eq!(&phi[4..8], &[1.0, 0.2, 0.1, 0.0]);
        assert!(phi[..4].iter().chain(&phi[8..]).all(|&x| x == 0.0));
    }

    #[test]
    fn actions_have_disjoint_support() {
        let cfg = ModelConfig::uniform(2, 10, 2, 1.0).unwrap();
        let s = SystemState::new(vec![UserState::new(3, 2, 1), UserState::new(4, 4, 0)]);
        let a = features(&s, Action::New(1), &cfg);
        let b = features(&s, Action::Retransmit(0), &cfg);
        assert!(a.iter().zip(&b).all(|(x, y)| x * y == 0.0));
        let w = block_width(2);
        let idx = Action::Retransmit(0).index(2);
        let outside = b.iter().enumerate().filter(|(i, _)| *i / w != idx);
        assert!(outside.into_iter().all(|(_, &x)| x == 0.0));
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = boltzmann_probs(&[0.0; 5], 1.0);
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn dominant_preference_wins() {
        let p = boltzmann_probs(&[-1e6, 0.0, 3.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        let p = boltzmann_probs(&[1e308, -1e308], 1.0);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(prefs in prop::collection::vec(-50.0f64..50.0, 1..9), t in 0.05f64..5.0) {
            let p = boltzmann_probs(&prefs, t);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shift_invariance(prefs in prop::collection::vec(-50.0f64..50.0, 1..9), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = prefs.iter().map(|x| x + c).collect();
            let a = boltzmann_probs(&prefs, 1.0);
            let b = boltzmann_probs(&shifted, 1.0);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_guard() {
        let cfg = ModelConfig::uniform(2, 10, 0, 1.0).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![0.5, 0.2] }).unwrap();
        let c = SarsaConfig {
            theta_bound: 1e-3,
            horizon: 100,
            keep_records: true,
            ..SarsaConfig::default()
        };
        match sarsa_lfa_run(&m, &c, 1) {
            Err(LearnerError::LfaDiverged { step, trace, .. }) => assert_eq!(trace.records.len() as u64, step),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reproducible() {
        let cfg = ModelConfig::uniform(2, 10, 1, 0.7).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::harq_geometric(&[0.5, 0.2], 0.5, 1)).unwrap();
        let c = SarsaConfig {
            lambda: 0.7,
            horizon: 3000,
            keep_records: true,
            ..SarsaConfig::default()
        };
        let a = sarsa_lfa_run(&m, &c, 4).unwrap();
        let b = sarsa_lfa_run(&m, &c, 4).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state, b.state);
        assert!(a.state.eta >= 0.0);
    }
}

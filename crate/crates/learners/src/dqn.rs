//! Deep Q-network with experience replay, a periodically synced target
//! network, Huber loss and Adam.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use aoi_core::kernel::AoiModel;
use aoi_core::model::{Action, SystemState};
use aoi_core::sim::{rng_from_seed, SimRng, StepRecord, ENV_STREAM, POLICY_STREAM};
use aoi_core::{Error, Policy, RunTrace};

use crate::error::{LearnerError, Result};
use crate::mlp::{Adam, MlpParams};

/// Stream for weight initialization and minibatch sampling.
pub const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HuberVariant {
    /// `e^2 / 2` for `|e| <= d`, `d (|e| - d / 2)` beyond.
    Continuous,
    /// `e^2` for `|e| <= d`, `d (|e| - d / 2)` beyond.
    Squared,
}

pub fn huber(e: f64, d: f64, variant: HuberVariant) -> f64 {
    if e.abs() <= d {
        match variant {
            HuberVariant::Continuous => 0.5 * e * e,
            HuberVariant::Squared => e * e,
        }
    } else {
        d * (e.abs() - 0.5 * d)
    }
}

pub fn huber_grad(e: f64, d: f64, variant: HuberVariant) -> f64 {
    if e.abs() <= d {
        match variant {
            HuberVariant::Continuous => e,
            HuberVariant::Squared => 2.0 * e,
        }
    } else {
        d * e.signum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub discount: f64,
    pub lr: f64,
    pub batch: usize,
    pub replay: usize,
    pub eps0: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
    pub episode_len: u64,
    pub hidden: usize,
    pub huber_d: f64,
    pub huber: HuberVariant,
    /// Decisions between target syncs.
    pub target_sync: u64,
    /// Reward is `-cost * cost_scale`; `None` uses `1 / (sum(w) N)`.
    pub cost_scale: Option<f64>,
    pub keep_records: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            lr: 1e-4,
            batch: 32,
            replay: 2000,
            eps0: 1.0,
            eps_min: 0.01,
            eps_decay: 0.9,
            episode_len: 1000,
            hidden: 24,
            huber_d: 1.0,
            huber: HuberVariant::Continuous,
            target_sync: 1000,
            cost_scale: None,
            keep_records: false,
        }
    }
}

impl DqnConfig {
    /// `max(eps_min, eps0 * decay^episode)` with `episode` counted from 0.
    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.eps0 * self.eps_decay.powi(episode as i32)).max(self.eps_min)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.discount > 0.0
            && self.discount < 1.0
            && self.lr > 0.0
            && self.batch >= 1
            && self.replay >= self.batch
            && (0.0..=1.0).contains(&self.eps_min)
            && self.eps_min <= self.eps0
            && self.eps0 <= 1.0
            && self.episode_len >= 1
            && self.hidden >= 1
            && self.huber_d > 0.0
            && self.target_sync >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad DQN hyperparameters: {self:?}")).into())
        }
    }
}

/// Network input: `(rx / N, tx / N)` per user, plus `r / r_max` per user under HARQ.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder {
    max_age: f64,
    max_retx: f64,
    with_retx: bool,
    users: usize,
}

impl StateEncoder {
    pub fn new(model: &AoiModel) -> Self {
        Self {
            max_age: f64::from(model.max_age()),
            max_retx: f64::from(model.max_retx().max(1)),
            with_retx: model.is_harq(),
            users: model.users(),
        }
    }

    pub fn width(&self) -> usize {
        if self.with_retx {
            3 * self.users
        } else {
            2 * self.users
        }
    }

    pub fn encode(&self, s: &SystemState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.width());
        x.extend(s.users.iter().map(|u| f64::from(u.rx) / self.max_age));
        x.extend(s.users.iter().map(|u| f64::from(u.tx) / self.max_age));
        if self.with_retx {
            x.extend(s.users.iter().map(|u| f64::from(u.retx) / self.max_retx));
        }
        x
    }
}

/// One stored transition. `next_valid` masks the actions valid in `next`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub next: Vec<f64>,
    pub cost: f64,
    pub next_valid: Vec<bool>,
}

/// FIFO replay memory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn argmax_masked(q: &[f64], valid: &[bool]) -> usize {
    let mut best = None;
    for (i, (&v, &ok)) in q.iter().zip(valid).enumerate() {
        if ok && best.is_none_or(|b: usize| v > q[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one valid action")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnState {
    pub online: MlpParams,
    pub target: MlpParams,
    pub adam: Adam,
    pub replay: ReplayBuffer,
    pub epsilon: f64,
    pub episode: usize,
    /// Decisions taken.
    pub steps: u64,
    /// Steps at which the target network was synced.
    pub syncs: Vec<u64>,
}

/// Training statistics of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub epsilon: f64,
    pub avg_aoi: f64,
    pub tx_rate: f64,
    pub mean_loss: f64,
}

pub struct DqnAgent<'a> {
    model: &'a AoiModel,
    pub cfg: DqnConfig,
    pub state: DqnState,
    encoder: StateEncoder,
    scale: f64,
    actions: usize,
    grad: Vec<f64>,
}

impl<'a> DqnAgent<'a> {
    pub fn new(model: &'a AoiModel, cfg: DqnConfig, rng: &mut SimRng) -> Result<Self> {
        cfg.validate()?;
        let encoder = StateEncoder::new(model);
        let actions = Action::count(model.users());
        let online = MlpParams::glorot(encoder.width(), cfg.hidden, actions, rng);
        let scale = cfg.cost_scale.unwrap_or_else(|| {
            let w: f64 = model.config().weights.iter().sum();
            1.0 / (w * f64::from(model.max_age()))
        });
        let n = online.w.len();
        Ok(Self {
            state: DqnState {
                target: online.clone(),
                online,
                adam: Adam::new(n, cfg.lr),
                replay: ReplayBuffer::new(cfg.replay),
                epsilon: cfg.epsilon(0),
                episode: 0,
                steps: 0,
                syncs: Vec::new(),
            },
            model,
            encoder,
            scale,
            actions,
            grad: vec![0.0; n],
            cfg,
        })
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    fn mask(&self, s: &SystemState) -> Vec<bool> {
        let m = self.model.users();
        (0..self.actions)
            .map(|i| Action::from_index(i, m).is_some_and(|a| self.model.is_valid(s, a)))
            .collect()
    }

    /// Valid action with the largest online value.
    pub fn greedy(&self, s: &SystemState) -> Result<Action> {
        let q = self.state.online.forward(&self.encoder.encode(s))?;
        let i = argmax_masked(&q, &self.mask(s));
        Ok(Action::from_index(i, self.model.users()).expect("index in range"))
    }

    /// Epsilon-greedy over the valid actions.
    pub fn act(&self, s: &SystemState, rng: &mut SimRng) -> Result<Action> {
        if rng.random::<f64>() < self.state.epsilon {
            let valid = self.model.valid_actions(s);
            Ok(valid[rng.random_range(0..valid.len())])
        } else {
            self.greedy(s)
        }
    }

    /// One minibatch update; returns the mean loss, or `None` while the
    /// buffer holds fewer than a batch.
    pub fn train_step(&mut self, rng: &mut SimRng) -> Result<Option<f64>> {
        let st = &mut self.state;
        let len = st.replay.len();
        if len < self.cfg.batch {
            return Ok(None);
        }
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let b = self.cfg.batch as f64;
        let mut loss = 0.0;
        let mut dout = vec![0.0; self.actions];
        for _ in 0..self.cfg.batch {
            let ex = &st.replay.items[rng.random_range(0..len)];
            let act = st.online.forward_full(&ex.state)?;
            let q_next = st.online.forward(&ex.next)?;
            let a2 = argmax_masked(&q_next, &ex.next_valid);
            let target = -ex.cost * self.scale + self.cfg.discount * st.target.forward(&ex.next)?[a2];
            let e = act.output[ex.action] - target;
            loss += huber(e, self.cfg.huber_d, self.cfg.huber) / b;
            dout.iter_mut().for_each(|d| *d = 0.0);
            dout[ex.action] = huber_grad(e, self.cfg.huber_d, self.cfg.huber) / b;
            st.online.backward(&ex.state, &act, &dout, &mut self.grad)?;
        }
        if !loss.is_finite() {
            return Err(LearnerError::DqnNumericFailure {
                episode: st.episode,
                step: st.steps,
                detail: format!("minibatch loss {loss}"),
            });
        }
        st.adam.step(&mut st.online.w, &self.grad)?;
        if !st.online.is_finite() {
            return Err(LearnerError::DqnNumericFailure {
                episode: st.episode,
                step: st.steps,
                detail: "non-finite parameters after Adam step".into(),
            });
        }
        Ok(Some(loss))
    }

    /// Records a transition, trains once and syncs the target when due.
    pub fn observe(&mut self, s: &SystemState, a: Action, cost: f64, next: &SystemState, rng: &mut SimRng) -> Result<Option<f64>> {
        let ex = Experience {
            state: self.encoder.encode(s),
            action: a.index(self.model.users()),
            next: self.encoder.encode(next),
            cost,
            next_valid: self.mask(next),
        };
        self.state.replay.push(ex);
        let loss = self.train_step(rng)?;
        self.state.steps += 1;
        if self.state.steps % self.cfg.target_sync == 0 {
            self.state.target = self.state.online.clone();
            self.state.syncs.push(self.state.steps);
        }
        Ok(loss)
    }
}

/// Acts greedily on a fixed network; used to evaluate a trained agent.
#[derive(Debug, Clone)]
pub struct GreedyNetPolicy {
    model: AoiModel,
    encoder: StateEncoder,
    params: MlpParams,
}

impl GreedyNetPolicy {
    pub fn new(model: &AoiModel, params: MlpParams) -> Result<Self> {
        let encoder = StateEncoder::new(model);
        let out = Action::count(model.users());
        if params.input != encoder.width() {
            return Err(LearnerError::ShapeMismatch {
                expected: encoder.width(),
                got: params.input,
            });
        }
        if params.output != out {
            return Err(LearnerError::ShapeMismatch {
                expected: out,
                got: params.output,
            });
        }
        Ok(Self {
            model: model.clone(),
            encoder,
            params,
        })
    }
}

impl Policy for GreedyNetPolicy {
    fn name(&self) -> String {
        "dqn".into()
    }

    fn decide(&mut self, state: &SystemState, _rng: &mut SimRng) -> Action {
        let q = self.params.forward(&self.encoder.encode(state)).expect("shape checked at construction");
        let m = self.model.users();
        let valid: Vec<bool> = (0..q.len())
            .map(|i| Action::from_index(i, m).is_some_and(|a| self.model.is_valid(state, a)))
            .collect();
        Action::from_index(argmax_masked(&q, &valid), m).expect("index in range")
    }
}

#[derive(Debug, Clone)]
pub struct DqnRun {
    pub params: MlpParams,
    pub state: DqnState,
    pub traces: Vec<RunTrace>,
    pub stats: Vec<EpisodeStats>,
}

/// Trains for `episodes` windows of `episode_len` decisions on one continuing
/// environment run.
pub fn dqn_train(model: &AoiModel, cfg: &DqnConfig, episodes: usize, seed: u64) -> Result<DqnRun> {
    let mut env = rng_from_seed(seed, ENV_STREAM);
    let mut pol = rng_from_seed(seed, POLICY_STREAM);
    let mut train = rng_from_seed(seed, TRAIN_STREAM);
    let mut agent = DqnAgent::new(model, cfg.clone(), &mut train)?;
    let mut s = model.initial_state().clone();
    let mut traces = Vec::with_capacity(episodes);
    let mut stats = Vec::with_capacity(episodes);
    for e in 0..episodes {
        agent.state.episode = e;
        agent.state.epsilon = cfg.epsilon(e);
        let mut trace = RunTrace::new(seed);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for _ in 0..cfg.episode_len {
            let a = agent.act(&s, &mut pol)?;
            let step = model.step(&s, a, &mut env)?;
            if let Some(l) = agent.observe(&s, a, step.cost.aoi_cost, &step.next, &mut train)? {
                loss_sum += l;
                loss_n += 1;
            }
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
        }
        trace.final_state = Some(s.clone());
        stats.push(EpisodeStats {
            episode: e,
            epsilon: agent.state.epsilon,
            avg_aoi: trace.avg_aoi(),
            tx_rate: trace.tx_rate(),
            mean_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
        });
        traces.push(trace);
    }
    Ok(DqnRun {
        params: agent.state.online.clone(),
        state: agent.state,
        traces,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use aoi_core::model::{ModelConfig, ProtocolSpec};

    fn harq(users: usize) -> AoiModel {
        let base: Vec<f64> = (0..users).map(|j| j as f64 / users as f64).collect();
        let cfg = ModelConfig::uniform(users, 10, 3, 1.0).unwrap();
        AoiModel::new(cfg, ProtocolSpec::harq_geometric(&base, 0.5, 3)).unwrap()
    }

    #[test]
    fn huber_values() {
        let v = HuberVariant::Squared;
        assert_eq!(huber(0.0, 1.0, v), 0.0);
        assert_eq!(huber(0.5, 1.0, v), 0.25);
        assert_eq!(huber(2.0, 1.0, v), 1.5);
        let c = HuberVariant::Continuous;
        assert_eq!(huber(0.5, 1.0, c), 0.125);
        assert_eq!(huber(-2.0, 1.0, c), 1.5);
        assert_eq!(huber_grad(-3.0, 1.0, c), -1.0);
    }

    #[test]
    fn epsilon_schedule() {
        let c = DqnConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(1) - 0.9).abs() < 1e-15);
        assert_eq!(c.epsilon(1000), 0.01);
        assert!((0..500).all(|e| (0.01..=1.0).contains(&c.epsilon(e))));
    }

    #[test]
    fn encoder_width() {
        assert_eq!(StateEncoder::new(&harq(3)).width(), 9);
        let cfg = ModelConfig::uniform(2, 10, 0, 1.0).unwrap();
        let arq = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![0.1, 0.2] }).unwrap();
        let enc = StateEncoder::new(&arq);
        assert_eq!(enc.width(), 4);
        assert_eq!(enc.encode(arq.initial_state()), vec![0.1, 0.2, 0.1, 0.1]);
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(Experience {
                state: vec![i as f64],
                action: 0,
                next: vec![],
                cost: 0.0,
                next_valid: vec![true],
            });
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.items[0].state, vec![2.0]);
    }

    #[test]
    fn masked_argmax_skips_invalid() {
        assert_eq!(argmax_masked(&[5.0, 1.0, 3.0], &[false, true, true]), 2);
    }

    #[test]
    fn target_changes_only_at_syncs() {
        let m = harq(2);
        let cfg = DqnConfig {
            episode_len: 50,
            target_sync: 30,
            ..DqnConfig::default()
        };
        let mut train = rng_from_seed(0, TRAIN_STREAM);
        let mut pol = rng_from_seed(0, POLICY_STREAM);
        let mut env = rng_from_seed(0, ENV_STREAM);
        let mut agent = DqnAgent::new(&m, cfg, &mut train).unwrap();
        let mut s = m.initial_state().clone();
        let mut prev = agent.state.target.clone();
        for _ in 0..100 {
            let a = agent.act(&s, &mut pol).unwrap();
            let st = m.step(&s, a, &mut env).unwrap();
            agent.observe(&s, a, st.cost.aoi_cost, &st.next, &mut train).unwrap();
            let synced = agent.state.steps % 30 == 0;
            if !synced {
                assert_eq!(agent.state.target, prev);
            } else {
                assert_eq!(agent.state.target, agent.state.online);
            }
            assert!(agent.state.replay.len() <= 2000);
            prev = agent.state.target.clone();
            s = st.next;
        }
        assert_eq!(agent.state.syncs, vec![30, 60, 90]);
    }

    #[test]
    fn training_is_reproducible() {
        let m = harq(2);
        let cfg = DqnConfig {
            episode_len: 200,
            ..DqnConfig::default()
        };
        let a = dqn_train(&m, &cfg, 2, 5).unwrap();
        let b = dqn_train(&m, &cfg, 2, 5).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.stats.len(), 2);
    }
}

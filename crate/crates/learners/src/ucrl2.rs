//! Optimistic learning of error probabilities with a multiplier for the
//! transmission budget: UCRL2-VI (planning by relative value iteration) and
//! UCRL2-Whittle (index policy, standard ARQ only).

use serde::{Deserialize, Serialize};

use aoi_core::index::{ArmIndex, ArqArm, WhittlePolicy};
use aoi_core::kernel::AoiModel;
use aoi_core::mdp::CompiledMdp;
use aoi_core::model::{Action, ProtocolSpec, SystemState};
use aoi_core::rvi::{rvi_solve, DeterministicPolicy, RviOptions};
use aoi_core::sim::{rng_from_seed, StepRecord, ENV_STREAM};
use aoi_core::{Error, RunTrace};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ucrl2Config {
    /// Transmission budget.
    pub lambda: f64,
    /// Confidence parameter.
    pub rho: f64,
    /// Bonus constant `U`.
    pub bonus: f64,
    /// Multiplier step `alpha`.
    pub alpha: f64,
    pub eta_init: f64,
    /// Slots to run.
    pub horizon: u64,
    pub keep_records: bool,
}

impl Default for Ucrl2Config {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            rho: 0.05,
            bonus: 0.05,
            alpha: 10.0,
            eta_init: 0.0,
            horizon: 10_000,
            keep_records: false,
        }
    }
}

/// Error key of a transmission: `(user, previous attempts)`.
pub fn attempt_pair(state: &SystemState, action: Action) -> Option<(usize, usize)> {
    match action {
        Action::Idle => None,
        Action::New(j) => Some((j, 0)),
        Action::Retransmit(j) => Some((j, state.users[j].retx as usize)),
    }
}

/// Counters and estimates kept across episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcrlState {
    /// `N(j, r)`: attempts of user `j` with `r` previous attempts.
    pub visits: Vec<Vec<u64>>,
    /// `E(j, r)`: failed attempts.
    pub failures: Vec<Vec<u64>>,
    /// Counts within the current episode.
    pub episode_visits: Vec<Vec<u64>>,
    /// Counts at the start of the current episode.
    pub episode_base: Vec<Vec<u64>>,
    pub episode: usize,
    /// Decision index `t_k` at which the current episode started (one-based).
    pub episode_start: u64,
    /// Decisions taken so far.
    pub steps: u64,
    /// Transmissions so far.
    pub transmissions: u64,
    pub eta: f64,
    /// Optimistic estimates used in the current episode.
    pub optimistic: Vec<Vec<f64>>,
}

impl UcrlState {
    pub fn new(users: usize, levels: usize, eta: f64) -> Self {
        let zeros = vec![vec![0; levels]; users];
        Self {
            visits: zeros.clone(),
            failures: zeros.clone(),
            episode_visits: zeros.clone(),
            episode_base: zeros,
            episode: 0,
            episode_start: 1,
            steps: 0,
            transmissions: 0,
            eta,
            optimistic: vec![vec![0.0; levels]; users],
        }
    }

    /// `E / max(N, 1)`.
    pub fn empirical(&self, j: usize, r: usize) -> f64 {
        self.failures[j][r] as f64 / self.visits[j][r].max(1) as f64
    }

    /// `max(0, g_hat - sqrt(U log(|S||A| t_k / rho) / max(1, N)))`.
    pub fn optimistic_estimate(&self, j: usize, r: usize, log_term: f64, bonus: f64) -> f64 {
        let width = (bonus * log_term / self.visits[j][r].max(1) as f64).sqrt();
        (self.empirical(j, r) - width).max(0.0)
    }

    /// Starts an episode: multiplier step and optimistic estimates.
    pub fn begin_episode(&mut self, cfg: &Ucrl2Config, state_actions: f64) {
        let t_k = self.steps + 1;
        self.episode += 1;
        self.episode_start = t_k;
        let rate = self.transmissions as f64 / t_k as f64;
        self.eta = (self.eta + cfg.alpha * (rate - cfg.lambda)).max(0.0);
        let log_term = (state_actions * t_k as f64 / cfg.rho).ln().max(0.0);
        for j in 0..self.visits.len() {
            for r in 0..self.visits[j].len() {
                self.optimistic[j][r] = self.optimistic_estimate(j, r, log_term, cfg.bonus);
            }
        }
        self.episode_base.clone_from(&self.visits);
        self.episode_visits.iter_mut().flatten().for_each(|v| *v = 0);
    }

    /// Records one decision; returns `true` when the episode should end.
    pub fn record(&mut self, pair: Option<(usize, usize)>, failed: bool) -> bool {
        self.steps += 1;
        let mut done = false;
        if let Some((j, r)) = pair {
            self.transmissions += 1;
            self.visits[j][r] += 1;
            if failed {
                self.failures[j][r] += 1;
            }
            self.episode_visits[j][r] += 1;
            done = self.episode_visits[j][r] >= self.episode_base[j][r].max(1);
        }
        let length = self.steps + 1 - self.episode_start;
        done || length >= self.episode_start
    }
}

/// Per-episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub start: u64,
    pub eta: f64,
    pub optimistic: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Ucrl2Run {
    pub trace: RunTrace,
    pub state: UcrlState,
    pub episodes: Vec<EpisodeLog>,
}

fn run_episodes(
    model: &AoiModel,
    cfg: &Ucrl2Config,
    seed: u64,
    levels: usize,
    state_actions: f64,
    mut plan: impl FnMut(&UcrlState) -> Result<Box<dyn Fn(&SystemState) -> Action>>,
) -> Result<Ucrl2Run> {
    if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!("budget {} outside (0, 1]", cfg.lambda)).into());
    }
    let mut rng = rng_from_seed(seed, ENV_STREAM);
    let mut st = UcrlState::new(model.users(), levels, cfg.eta_init);
    let mut trace = RunTrace::new(seed);
    let mut episodes = Vec::new();
    let mut state = model.initial_state().clone();
    while trace.total_slots < cfg.horizon {
        st.begin_episode(cfg, state_actions);
        episodes.push(EpisodeLog {
            start: st.episode_start,
            eta: st.eta,
            optimistic: st.optimistic.clone(),
        });
        let policy = plan(&st)?;
        loop {
            let action = policy(&state);
            let pair = attempt_pair(&state, action);
            let step = model.step(&state, action, &mut rng)?;
            let failed = step.feedback.outcome.is_some() && !step.feedback.is_ack();
            let next = step.next;
            trace.push(
                StepRecord {
                    state,
                    action,
                    feedback: step.feedback,
                    cost: step.cost,
                    slots: step.slots,
                },
                cfg.keep_records,
            );
            state = next;
            let end = st.record(pair, failed);
            if trace.total_slots >= cfg.horizon || end {
                break;
            }
        }
    }
    trace.final_state = Some(state);
    Ok(Ucrl2Run {
        trace,
        state: st,
        episodes,
    })
}

/// UCRL2-VI: optimistic errors per `(user, r)` and an RVI-optimal policy for
/// the optimistic model at the current multiplier.
pub fn ucrl2_vi_run(model: &AoiModel, cfg: &Ucrl2Config, rvi: &RviOptions, seed: u64) -> Result<Ucrl2Run> {
    let mut mdp = CompiledMdp::compile(model)?;
    let levels = model.max_retx() as usize + 1;
    let state_actions = mdp.num_states() as f64 * (2 * model.users() + 1) as f64;
    let mut warm: Option<Vec<f64>> = None;
    run_episodes(model, cfg, seed, levels, state_actions, move |st| {
        let g = st.optimistic.clone();
        mdp.reweight(|k| g[k.user][(k.retx as usize).min(levels - 1)]);
        // Planning accuracy 1 / sqrt(t_k), as in extended value iteration.
        let opts = RviOptions {
            epsilon: rvi.epsilon.max(1.0 / (st.episode_start as f64).sqrt()),
            ..rvi.clone()
        };
        let (policy, tables): (DeterministicPolicy, _) = rvi_solve(&mdp, st.eta, &opts, warm.as_deref())?;
        warm = Some(tables.raw);
        Ok(Box::new(move |s: &SystemState| policy.lookup(s)))
    })
}

/// UCRL2-Whittle: optimistic per-user errors plugged into the index policy.
pub fn ucrl2_whittle_run(model: &AoiModel, cfg: &Ucrl2Config, seed: u64) -> Result<Ucrl2Run> {
    if !matches!(model.protocol(), ProtocolSpec::StandardArq { .. }) {
        return Err(Error::WrongProtocol { expected: "standard ARQ" }.into());
    }
    let weights = model.config().weights.clone();
    let states = f64::from(model.max_age()).powi(model.users() as i32);
    let state_actions = states * (2 * model.users() + 1) as f64;
    run_episodes(model, cfg, seed, 1, state_actions, move |st| {
        let arms = weights
            .iter()
            .zip(&st.optimistic)
            .map(|(&w, g)| ArmIndex::Arq(ArqArm { w, p: g[0].min(1.0 - 1e-12) }))
            .collect();
        let policy = WhittlePolicy::new(arms, st.eta);
        Ok(Box::new(move |s: &SystemState| policy.decide_state(s)))
    })
}

//! Relative value iteration for the Lagrangian average-cost problem.
//!
//! Stage cost of action `a` in state `s` is `c(s,a) + eta * d(s,a)`, where `c`
//! sums the weighted AoI over the slots of the stage and `d` counts transmission
//! slots. Stages may last several slots (FR HARQ pulls). Iteration runs on the
//! aperiodic uniformized chain `P~ = (k/tau) P + (1 - k/tau) I` with cost
//! `c / tau`, which has the same gain and policies and converges even when an
//! optimal policy is periodic.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mdp::CompiledMdp;
use crate::model::{Action, SystemState};
use crate::sim::{Policy, SimRng};
use crate::space::StateSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct RviOptions {
    /// Stop once successive relative values differ by at most this (sup norm).
    pub epsilon: f64,
    pub max_sweeps: usize,
    /// Self-loop weight of the uniformized chain, in `(0, 1]`.
    pub aperiodicity: f64,
    /// Reference state index; defaults to the initial state.
    pub reference: Option<usize>,
    /// Q values within `tie_tolerance * (1 + |min Q|)` of the minimum count as ties;
    /// ties go to the lowest action index.
    pub tie_tolerance: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            max_sweeps: 100_000,
            aperiodicity: 0.5,
            reference: None,
            tie_tolerance: 1e-9,
        }
    }
}

/// Differential values, state-action values and the gain at a given `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    /// Differential cost `h(s)`, zero at the reference state.
    pub h: Vec<f64>,
    /// `Q(s,a)` laid out like the choices of the compiled MDP.
    pub q: Vec<f64>,
    pub eta: f64,
    /// Optimal average Lagrangian cost per slot.
    pub avg_cost: f64,
    pub ref_state: usize,
    /// `max_s |min_a Q(s,a) - h(s) - avg_cost|`.
    pub residual: f64,
    pub sweeps: usize,
    /// Relative values of the uniformized iteration, for warm starts.
    pub raw: Vec<f64>,
}

impl ValueTables {
    /// Q values of the valid actions of `state`, in action order.
    pub fn q_row<'a>(&'a self, mdp: &CompiledMdp, state: usize) -> &'a [f64] {
        let off = mdp.choice_offset(state);
        &self.q[off..off + mdp.choices(state).len()]
    }

    pub fn q_of(&self, mdp: &CompiledMdp, state: usize, action: Action) -> Option<f64> {
        mdp.choice_of(state, action)
            .map(|i| self.q[mdp.choice_offset(state) + i])
    }
}

/// An action per enumerated state.
#[derive(Debug, Clone)]
pub struct DeterministicPolicy {
    space: Arc<StateSpace>,
    actions: Vec<Action>,
}

impl PartialEq for DeterministicPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.actions == other.actions
            && (Arc::ptr_eq(&self.space, &other.space) || self.space.signature() == other.space.signature())
    }
}

impl DeterministicPolicy {
    pub fn new(space: Arc<StateSpace>, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::SpaceMismatch);
        }
        Ok(Self { space, actions })
    }

    /// Builds a table by evaluating `rule` on every enumerated state.
    pub fn from_fn(space: Arc<StateSpace>, mut rule: impl FnMut(&SystemState) -> Action) -> Self {
        let actions = space.states().iter().map(&mut rule).collect();
        Self { space, actions }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn shared_space(&self) -> Arc<StateSpace> {
        Arc::clone(&self.space)
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action(&self, state: usize) -> Action {
        self.actions[state]
    }

    pub fn set_action(&mut self, state: usize, action: Action) {
        self.actions[state] = action;
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Indices where the two policies disagree.
    pub fn disagreements(&self, other: &Self) -> Result<Vec<usize>> {
        if self.actions.len() != other.actions.len() || self.space.signature() != other.space.signature() {
            return Err(Error::SpaceMismatch);
        }
        Ok((0..self.actions.len())
            .filter(|&i| self.actions[i] != other.actions[i])
            .collect())
    }

    /// Action for an arbitrary state. Panics if the state is not enumerated,
    /// which cannot happen for states reached from the initial state.
    pub fn lookup(&self, state: &SystemState) -> Action {
        let idx = self
            .space
            .get(state)
            .unwrap_or_else(|| panic!("state {state} outside the policy's state space"));
        self.actions[idx]
    }

    /// Checks that every action is valid in the compiled model.
    pub fn validate(&self, mdp: &CompiledMdp) -> Result<()> {
        if self.len() != mdp.num_states() {
            return Err(Error::SpaceMismatch);
        }
        for (s, &a) in self.actions.iter().enumerate() {
            if mdp.choice_of(s, a).is_none() {
                return Err(Error::ActionMasked {
                    action: a,
                    state: mdp.space().state(s).to_string(),
                });
            }
        }
        Ok(())
    }
}

impl Policy for DeterministicPolicy {
    fn name(&self) -> String {
        "table".into()
    }

    fn decide(&mut self, state: &SystemState, _rng: &mut SimRng) -> Action {
        self.lookup(state)
    }
}

/// Solves the Lagrangian problem at multiplier `eta`.
pub fn rvi_solve(
    mdp: &CompiledMdp,
    eta: f64,
    opts: &RviOptions,
    warm_start: Option<&[f64]>,
) -> Result<(DeterministicPolicy, ValueTables)> {
    let n = mdp.num_states();
    let kappa = opts.aperiodicity;
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidConfig(format!("aperiodicity {kappa} outside (0, 1]")));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfig(format!("eta must be finite and >= 0, got {eta}")));
    }
    let reference = opts.reference.unwrap_or_else(|| mdp.initial());
    let mut w = match warm_start {
        Some(v) if v.len() == n => v.to_vec(),
        _ => vec![0.0; n],
    };
    let mut next = vec![0.0; n];
    let mut sweeps = 0;
    let mut gain;
    loop {
        for (s, slot) in next.iter_mut().enumerate() {
            let ws = w[s];
            let mut best = f64::INFINITY;
            for c in mdp.choices(s) {
                let tau = c.duration;
                let stay = kappa / tau;
                let v = (c.aoi_cost + eta * c.tx_slots) / tau + stay * mdp.expect(c, &w) + (1.0 - stay) * ws;
                if v < best {
                    best = v;
                }
            }
            *slot = best;
        }
        gain = next[reference];
        let mut diff: f64 = 0.0;
        for (x, y) in next.iter_mut().zip(&w) {
            *x -= gain;
            diff = diff.max((*x - y).abs());
        }
        std::mem::swap(&mut w, &mut next);
        sweeps += 1;
        if !diff.is_finite() {
            return Err(Error::RviDiverged { sweeps, residual: diff });
        }
        if diff <= opts.epsilon {
            break;
        }
        if sweeps >= opts.max_sweeps {
            return Err(Error::RviDiverged { sweeps, residual: diff });
        }
    }

    let h: Vec<f64> = w.iter().map(|x| kappa * x).collect();
    let mut q = vec![0.0; mdp.num_choices()];
    let mut actions = Vec::with_capacity(n);
    let mut residual: f64 = 0.0;
    for s in 0..n {
        let off = mdp.choice_offset(s);
        let choices = mdp.choices(s);
        let mut best = f64::INFINITY;
        for (i, c) in choices.iter().enumerate() {
            let v = c.aoi_cost + eta * c.tx_slots - gain * (c.duration - 1.0) + mdp.expect(c, &h);
            q[off + i] = v;
            best = best.min(v);
        }
        let tol = opts.tie_tolerance * (1.0 + best.abs());
        let pick = (0..choices.len())
            .find(|&i| q[off + i] <= best + tol)
            .expect("every state has at least the idle action");
        actions.push(choices[pick].action);
        residual = residual.max((best - h[s] - gain).abs());
    }
    let policy = DeterministicPolicy {
        space: mdp.shared_space(),
        actions,
    };
    Ok((
        policy,
        ValueTables {
            h,
            q,
            eta,
            avg_cost: gain,
            ref_state: reference,
            residual,
            sweeps,
            raw: w,
        },
    ))
}

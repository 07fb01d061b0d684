//! Whittle indices, single-user threshold analytics and index-based baselines.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kernel::AoiModel;
use crate::mdp::CompiledMdp;
use crate::model::{Action, ModelConfig, ProtocolSpec, SystemState};
use crate::rvi::{rvi_solve, RviOptions};
use crate::sim::{Policy, SimRng};

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Probability that fewer than `info_len` of `block_len` symbols arrive when
/// each symbol is erased independently with probability `symbol_error`.
pub fn fr_error_prob(block_len: u32, info_len: u32, symbol_error: f64) -> f64 {
    let n = u64::from(block_len);
    let p = symbol_error;
    let total: f64 = (0..u64::from(info_len.min(block_len + 1)))
        .map(|k| {
            let lc = statrs::function::factorial::ln_binomial(n, k);
            (lc + xlny((n - k) as f64, p) + xlny(k as f64, 1.0 - p)).exp()
        })
        .sum();
    total.clamp(0.0, 1.0)
}

/// One user viewed as an ARQ arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArqArm {
    pub w: f64,
    /// Per-attempt error probability in `[0, 1)`.
    pub p: f64,
}

impl ArqArm {
    pub fn new(w: f64, p: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight {w} must be positive")));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("error probability {p} outside [0, 1)")));
        }
        Ok(Self { w, p })
    }
}

/// One user viewed as a fixed-redundancy HARQ arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrArm {
    pub w: f64,
    pub block_len: u32,
    pub info_len: u32,
    /// Block error probability in `[0, 1)`.
    pub p_fr: f64,
}

impl FrArm {
    pub fn new(w: f64, block_len: u32, info_len: u32, p_fr: f64) -> Result<Self> {
        ArqArm::new(w, p_fr)?;
        if info_len == 0 || info_len > block_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= k_s <= n_s, got ({block_len}, {info_len})"
            )));
        }
        Ok(Self {
            w,
            block_len,
            info_len,
            p_fr,
        })
    }

    pub fn from_symbol_error(w: f64, block_len: u32, info_len: u32, symbol_error: f64) -> Result<Self> {
        Self::new(w, block_len, info_len, fr_error_prob(block_len, info_len, symbol_error))
    }

    fn n(&self) -> f64 {
        f64::from(self.block_len)
    }
}

/// Index of an ARQ arm at receiver age `delta`.
pub fn whittle_index_arq(delta: f64, arm: &ArqArm) -> f64 {
    let p = arm.p;
    0.5 * arm.w * delta * (1.0 - p) * (delta + (1.0 + p) / (1.0 - p))
}

/// Index of an FR HARQ arm at receiver age `delta`; the subsidy is per slot.
pub fn whittle_index_fr(delta: f64, arm: &FrArm) -> f64 {
    if arm.block_len == 1 {
        return whittle_index_arq(delta, &ArqArm { w: arm.w, p: arm.p_fr });
    }
    let p = arm.p_fr;
    let n = arm.n();
    let nq = n * p / (1.0 - p);
    let mean = n / (1.0 - p);
    arm.w / (2.0 * mean) * ((delta + nq).powi(2) + delta + nq - n * n * p / (1.0 - p).powi(2))
}

/// Moments of the slots from the start of a pull until successful decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalStats {
    pub mean_s: f64,
    pub second_moment_s: f64,
    pub var_s: f64,
}

pub fn renewal_stats_fr(arm: &FrArm) -> RenewalStats {
    let p = arm.p_fr;
    let n = arm.n();
    RenewalStats {
        mean_s: n / (1.0 - p),
        second_moment_s: n * n * (1.0 + p) / (1.0 - p).powi(2),
        var_s: n * n * p / (1.0 - p).powi(2),
    }
}

/// Average AoI plus `subsidy` times the transmission rate of the threshold-`gamma`
/// policy on an unbounded-age ARQ arm (unit weight).
pub fn single_user_lagrange_cost(gamma: u32, arm: &ArqArm, subsidy: f64) -> f64 {
    let g = f64::from(gamma);
    let p = arm.p;
    let q = 1.0 - p;
    ((g - 1.0) * g / 2.0 + (subsidy + g) / q + p / (q * q)) / (g + p / q)
}

/// `(J, C)` of the threshold-`gamma` policy on an unbounded-age ARQ arm (unit weight).
pub fn single_user_closed_forms(gamma: u32, arm: &ArqArm) -> (f64, f64) {
    let g = f64::from(gamma);
    let p = arm.p;
    let q = 1.0 - p;
    let a = g * q + p;
    let j = (a * a + p) / (2.0 * q * a) + 0.5;
    (j, 1.0 / a)
}

/// The two integer thresholds around the continuous optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdCandidates {
    pub low: u32,
    pub high: u32,
    /// Whichever of the two has the smaller Lagrangian cost (`low` on ties).
    pub best: u32,
}

pub fn optimal_threshold(subsidy: f64, arm: &ArqArm) -> ThresholdCandidates {
    let p = arm.p;
    let x = ((2.0 * subsidy * (1.0 - p) + p).sqrt() - p) / (1.0 - p);
    let low = (x.floor().max(1.0)) as u32;
    let high = (x.ceil().max(1.0)) as u32;
    let best = if single_user_lagrange_cost(high, arm, subsidy) < single_user_lagrange_cost(low, arm, subsidy) {
        high
    } else {
        low
    };
    ThresholdCandidates { low, high, best }
}

/// Threshold-policy analytics of an FR arm (unit weight).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrThresholdForms {
    pub j: f64,
    pub c_rate: f64,
    pub l: f64,
}

pub fn fr_threshold_closed_forms(gamma: u32, arm: &FrArm, subsidy: f64) -> Result<FrThresholdForms> {
    if gamma < arm.block_len {
        return Err(Error::ThresholdBelowBlockLength {
            gamma,
            block_len: arm.block_len,
        });
    }
    let s = renewal_stats_fr(arm);
    let n = arm.n();
    let wait = f64::from(gamma) - n;
    let j = (s.second_moment_s + wait * s.mean_s) / (2.0 * (wait + s.mean_s)) + (f64::from(gamma) + n) / 2.0 - 0.5;
    let c_rate = s.mean_s / (wait + s.mean_s);
    Ok(FrThresholdForms {
        j,
        c_rate,
        l: j + subsidy * c_rate,
    })
}

/// How the passivity subsidy is charged for a multi-slot pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsidyAccounting {
    /// `C` for every slot the pull occupies.
    #[default]
    PerSlot,
    /// `C` once per pull.
    PerPull,
}

/// Truncation used by the numeric oracle: at least `20 * delta` and 50, and
/// long enough that `p^N` is negligible.
pub fn oracle_max_age(delta: u32, p: f64, block_len: u32) -> u32 {
    let tail = if p > 0.0 {
        (f64::from(block_len) * (1e-12f64).ln() / p.ln()).ceil() as u32
    } else {
        0
    };
    (20 * delta).max(50).max(tail).max(delta + 2 * block_len + 1)
}

/// Single-user ARQ model for the numeric oracle.
pub fn oracle_model_arq(delta: u32, arm: &ArqArm) -> Result<AoiModel> {
    let cfg = ModelConfig::new(vec![arm.w], oracle_max_age(delta, arm.p, 1), 0, 1.0)?;
    AoiModel::new_relaxed(cfg, ProtocolSpec::StandardArq { error: vec![arm.p] })
}

/// Single-user FR model for the numeric oracle with the arm's block error
/// imposed directly on every pull.
pub fn oracle_model_fr(delta: u32, arm: &FrArm) -> Result<CompiledMdp> {
    let cfg = ModelConfig::new(vec![arm.w], oracle_max_age(delta, arm.p_fr, arm.block_len), 0, 1.0)?;
    let model = AoiModel::new_relaxed(
        cfg,
        ProtocolSpec::FrHarq {
            block_len: arm.block_len,
            info_len: arm.info_len,
            symbol_error: vec![0.0],
        },
    )?;
    let mut mdp = CompiledMdp::compile(&model)?;
    mdp.reweight(|_| arm.p_fr);
    Ok(mdp)
}

/// Subsidy at which a new transmission and idling are equally good in receiver
/// age `delta` of a single-user model, found by bisection on the transmission
/// price.
pub fn indifference_subsidy_numeric(delta: u32, mdp: &CompiledMdp, accounting: SubsidyAccounting) -> Result<f64> {
    if mdp.users() != 1 {
        return Err(Error::InvalidConfig("the indifference oracle needs a single-user model".into()));
    }
    let space = mdp.space();
    let state = space.canonical(&SystemState::from_ages(&[delta]));
    let s = space.index_of(&state)?;
    let new_pos = mdp.choice_of(s, Action::New(0)).ok_or_else(|| Error::ActionMasked {
        action: Action::New(0),
        state: state.to_string(),
    })?;
    let idle_pos = mdp.choice_of(s, Action::Idle).expect("idle is always valid");
    let pull = mdp.choices(s)[new_pos].tx_slots;
    let opts = RviOptions {
        epsilon: 1e-11,
        max_sweeps: 2_000_000,
        ..RviOptions::default()
    };
    let mut warm: Option<Vec<f64>> = None;
    let mut gap = |eta: f64| -> Result<f64> {
        let (_, t) = rvi_solve(mdp, eta, &opts, warm.as_deref())?;
        let off = mdp.choice_offset(s);
        let d = t.q[off + new_pos] - t.q[off + idle_pos];
        warm = Some(t.raw);
        Ok(d)
    };
    let mut lo = 0.0;
    if gap(lo)? > 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut expansions = 0;
    while gap(hi)? <= 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::BracketFailure(format!("no idle preference at delta {delta}")));
        }
    }
    while hi - lo > 1e-9 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);
    Ok(match accounting {
        SubsidyAccounting::PerSlot => eta,
        SubsidyAccounting::PerPull => eta * pull,
    })
}

/// Index function of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmIndex {
    Arq(ArqArm),
    Fr(FrArm),
}

impl ArmIndex {
    pub fn index(&self, delta: f64) -> f64 {
        match self {
            ArmIndex::Arq(a) => whittle_index_arq(delta, a),
            ArmIndex::Fr(a) => whittle_index_fr(delta, a),
        }
    }

    pub fn error(&self) -> f64 {
        match self {
            ArmIndex::Arq(a) => a.p,
            ArmIndex::Fr(a) => a.p_fr,
        }
    }

    pub fn set_error(&mut self, p: f64) {
        match self {
            ArmIndex::Arq(a) => a.p = p,
            ArmIndex::Fr(a) => a.p_fr = p,
        }
    }
}

/// Arms of every user of an ARQ or FR HARQ model.
pub fn arms_of(config: &ModelConfig, protocol: &ProtocolSpec) -> Result<Vec<ArmIndex>> {
    match protocol {
        ProtocolSpec::StandardArq { error } => config
            .weights
            .iter()
            .zip(error)
            .map(|(&w, &p)| ArqArm::new(w, p).map(ArmIndex::Arq))
            .collect(),
        ProtocolSpec::FrHarq {
            block_len,
            info_len,
            symbol_error,
        } => config
            .weights
            .iter()
            .zip(symbol_error)
            .map(|(&w, &ps)| FrArm::from_symbol_error(w, *block_len, *info_len, ps).map(ArmIndex::Fr))
            .collect(),
        ProtocolSpec::GeneralHarq { .. } => Err(Error::WrongProtocol {
            expected: "standard ARQ or FR HARQ",
        }),
    }
}

/// User with the largest index and that index; lowest user on ties.
fn argmax_index(state: &SystemState, arms: &[ArmIndex]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, (u, arm)) in state.users.iter().zip(arms).enumerate() {
        let v = arm.index(f64::from(u.rx));
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Transmits to the user with the largest index if that index is at least `eta`.
pub fn wi_policy_decide(state: &SystemState, eta: f64, config: &ModelConfig, protocol: &ProtocolSpec) -> Result<Action> {
    let arms = arms_of(config, protocol)?;
    Ok(decide_with(state, eta, &arms))
}

fn decide_with(state: &SystemState, eta: f64, arms: &[ArmIndex]) -> Action {
    let (j, v) = argmax_index(state, arms);
    if v >= eta {
        Action::New(j)
    } else {
        Action::Idle
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhittlePolicy {
    pub arms: Vec<ArmIndex>,
    pub eta: f64,
}

impl WhittlePolicy {
    pub fn new(arms: Vec<ArmIndex>, eta: f64) -> Self {
        Self { arms, eta }
    }

    pub fn from_model(model: &AoiModel, eta: f64) -> Result<Self> {
        Ok(Self::new(arms_of(model.config(), model.protocol())?, eta))
    }

    pub fn decide_state(&self, state: &SystemState) -> Action {
        decide_with(state, self.eta, &self.arms)
    }
}

impl Policy for WhittlePolicy {
    fn name(&self) -> String {
        "whittle".into()
    }

    fn decide(&mut self, state: &SystemState, _rng: &mut SimRng) -> Action {
        self.decide_state(state)
    }
}

/// New packet to the user with the largest receiver age, lowest index on ties.
pub fn greedy_decide(state: &SystemState) -> Action {
    let mut best = 0;
    for (j, u) in state.users.iter().enumerate() {
        if u.rx > state.users[best].rx {
            best = j;
        }
    }
    Action::New(best)
}

/// New packet to user `t mod M` at decision `t`, counted from zero.
pub fn round_robin_decide(t: u64, users: usize) -> Action {
    Action::New((t % users as u64) as usize)
}

#[derive(Debug, Clone, Default)]
pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn decide(&mut self, state: &SystemState, _rng: &mut SimRng) -> Action {
        greedy_decide(state)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobinPolicy {
    t: u64,
}

impl RoundRobinPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for RoundRobinPolicy {
    fn name(&self) -> String {
        "round-robin".into()
    }

    fn decide(&mut self, state: &SystemState, _rng: &mut SimRng) -> Action {
        let a = round_robin_decide(self.t, state.len());
        self.t += 1;
        a
    }

    fn reset(&mut self) {
        self.t = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexRow {
    /// One-based user number.
    pub user: usize,
    pub delta: u32,
    pub index: f64,
}

pub fn index_table(arms: &[ArmIndex], deltas: impl IntoIterator<Item = u32> + Clone) -> Vec<IndexRow> {
    arms.iter()
        .enumerate()
        .flat_map(|(j, arm)| {
            deltas.clone().into_iter().map(move |d| IndexRow {
                user: j + 1,
                delta: d,
                index: arm.index(f64::from(d)),
            })
        })
        .collect()
}

pub fn write_index_csv<W: Write>(mut out: W, rows: &[IndexRow]) -> Result<()> {
    writeln!(out, "user,delta,index")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.user, r.delta, r.index)?;
    }
    Ok(())
}

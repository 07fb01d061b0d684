//! Multiplier search and randomized policies meeting the transmission budget.

use rand::Rng;

use crate::error::{Error, Result};
use crate::evaluate::{evaluate_exact, evaluate_mixture_exact, EvaluationResult, Method};
use crate::mdp::CompiledMdp;
use crate::model::{Action, SystemState};
use crate::rvi::{rvi_solve, DeterministicPolicy, RviOptions, ValueTables};
use crate::sim::{Policy, SimRng};

/// Deterministic policy except in one state, where the base action is taken
/// with probability `mu` and `alternative` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    pub base: DeterministicPolicy,
    pub state: usize,
    pub alternative: Action,
    pub mu: f64,
}

impl MixturePolicy {
    pub fn override_state(&self) -> &SystemState {
        self.base.space().state(self.state)
    }
}

impl Policy for MixturePolicy {
    fn name(&self) -> String {
        "mixture".into()
    }

    fn decide(&mut self, state: &SystemState, rng: &mut SimRng) -> Action {
        let idx = self
            .base
            .space()
            .get(state)
            .unwrap_or_else(|| panic!("state {state} outside the policy's state space"));
        if idx == self.state && rng.random::<f64>() >= self.mu {
            self.alternative
        } else {
            self.base.action(idx)
        }
    }
}

/// Runs `low` for the whole horizon with probability `mu`, else `high`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSharingPolicy {
    pub low: DeterministicPolicy,
    pub high: DeterministicPolicy,
    pub mu: f64,
    use_low: Option<bool>,
}

impl TimeSharingPolicy {
    pub fn new(low: DeterministicPolicy, high: DeterministicPolicy, mu: f64) -> Self {
        Self {
            low,
            high,
            mu,
            use_low: None,
        }
    }
}

impl Policy for TimeSharingPolicy {
    fn name(&self) -> String {
        "time-sharing".into()
    }

    fn decide(&mut self, state: &SystemState, rng: &mut SimRng) -> Action {
        let mu = self.mu;
        let low = *self.use_low.get_or_insert_with(|| rng.random::<f64>() < mu);
        if low {
            self.low.lookup(state)
        } else {
            self.high.lookup(state)
        }
    }

    fn reset(&mut self) {
        self.use_low = None;
    }
}

/// Result of the constrained construction.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstrainedPolicy {
    Deterministic(DeterministicPolicy),
    /// Randomizes in a single state.
    Mixture(MixturePolicy),
    /// Fallback when no single-state switch could be located.
    TimeSharing(TimeSharingPolicy),
}

impl ConstrainedPolicy {
    pub fn construction(&self) -> &'static str {
        match self {
            ConstrainedPolicy::Deterministic(_) => "deterministic",
            ConstrainedPolicy::Mixture(_) => "single-state",
            ConstrainedPolicy::TimeSharing(_) => "time-sharing",
        }
    }

    pub fn is_time_sharing(&self) -> bool {
        matches!(self, ConstrainedPolicy::TimeSharing(_))
    }

    /// Exact `(J, C)`; time-sharing is the `mu`-weighted average of its parts.
    pub fn evaluate(&self, mdp: &CompiledMdp) -> Result<EvaluationResult> {
        match self {
            ConstrainedPolicy::Deterministic(p) => evaluate_exact(mdp, p),
            ConstrainedPolicy::Mixture(m) => evaluate_mixture_exact(mdp, m),
            ConstrainedPolicy::TimeSharing(t) => {
                let a = evaluate_exact(mdp, &t.low)?;
                let b = evaluate_exact(mdp, &t.high)?;
                Ok(EvaluationResult {
                    j: t.mu * a.j + (1.0 - t.mu) * b.j,
                    c: t.mu * a.c + (1.0 - t.mu) * b.c,
                    stationary: None,
                    method: Method::Exact,
                })
            }
        }
    }
}

impl Policy for ConstrainedPolicy {
    fn name(&self) -> String {
        self.construction().into()
    }

    fn decide(&mut self, state: &SystemState, rng: &mut SimRng) -> Action {
        match self {
            ConstrainedPolicy::Deterministic(p) => p.decide(state, rng),
            ConstrainedPolicy::Mixture(p) => p.decide(state, rng),
            ConstrainedPolicy::TimeSharing(p) => p.decide(state, rng),
        }
    }

    fn reset(&mut self) {
        if let ConstrainedPolicy::TimeSharing(p) = self {
            p.reset();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSearchOptions {
    /// Initial step of the `alpha_0 / m` schedule; defaults to the largest
    /// per-slot AoI cost `N * sum(w)`.
    pub alpha0: Option<f64>,
    /// Accept `eta` once `|C - lambda|` is below this.
    pub tolerance: f64,
    /// Stop bisecting once the bracket is narrower than this (relative to `eta`).
    pub eta_tolerance: f64,
    pub max_iterations: usize,
    pub rvi: RviOptions,
}

impl Default for EtaSearchOptions {
    fn default() -> Self {
        Self {
            alpha0: None,
            tolerance: 1e-6,
            eta_tolerance: 1e-9,
            max_iterations: 300,
            rvi: RviOptions::default(),
        }
    }
}

/// RVI solution at one multiplier and its exact evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaPoint {
    pub eta: f64,
    pub policy: DeterministicPolicy,
    pub tables: ValueTables,
    pub eval: EvaluationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EtaOutcome {
    Converged(EtaPoint),
    /// `C` jumps across the budget between two arbitrarily close multipliers:
    /// `low.eval.c > lambda > high.eval.c`.
    Bracketed { low: EtaPoint, high: EtaPoint },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSearch {
    pub outcome: EtaOutcome,
    pub iterations: usize,
    /// `(eta, C)` for every solve, in order.
    pub history: Vec<(f64, f64)>,
}

impl EtaSearch {
    pub fn eta(&self) -> f64 {
        match &self.outcome {
            EtaOutcome::Converged(p) => p.eta,
            EtaOutcome::Bracketed { low, high } => 0.5 * (low.eta + high.eta),
        }
    }
}

fn solve_point(mdp: &CompiledMdp, eta: f64, rvi: &RviOptions, warm: Option<&[f64]>) -> Result<EtaPoint> {
    let (policy, tables) = rvi_solve(mdp, eta, rvi, warm)?;
    let eval = evaluate_exact(mdp, &policy)?;
    Ok(EtaPoint {
        eta,
        policy,
        tables,
        eval,
    })
}

/// Stochastic-approximation steps tried before switching to geometric expansion.
const SA_STEPS: usize = 20;

/// Smallest multiplier whose optimal policy meets the budget: stochastic
/// approximation `eta <- eta + alpha_m (C - lambda)` until the budget is
/// bracketed, then bisection.
pub fn eta_search(mdp: &CompiledMdp, budget: f64, opts: &EtaSearchOptions) -> Result<EtaSearch> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::InvalidConfig(format!("budget {budget} outside (0, 1]")));
    }
    let alpha0 = opts.alpha0.unwrap_or_else(|| {
        (0..mdp.num_states())
            .flat_map(|s| mdp.choices(s).iter().map(|c| c.aoi_cost / c.duration))
            .fold(1.0, f64::max)
    });
    let mut history = Vec::new();
    let first = solve_point(mdp, 0.0, &opts.rvi, None)?;
    history.push((0.0, first.eval.c));
    if first.eval.c <= budget + opts.tolerance {
        return Ok(EtaSearch {
            outcome: EtaOutcome::Converged(first),
            iterations: 1,
            history,
        });
    }
    let mut low = first;
    let mut high: Option<EtaPoint> = None;
    let mut eta = 0.0;
    let mut warm = low.tables.raw.clone();
    let mut iterations = 1;
    let mut m = 1;
    let mut c_last = low.eval.c;
    while high.is_none() {
        if iterations >= opts.max_iterations {
            return Err(Error::EtaSearchFailed { iterations });
        }
        eta = if m <= SA_STEPS {
            (eta + alpha0 / m as f64 * (c_last - budget)).max(0.0)
        } else {
            // The harmonic steps stall when C - lambda is small; expand geometrically.
            (2.0 * eta).max(alpha0)
        };
        m += 1;
        let p = solve_point(mdp, eta, &opts.rvi, Some(&warm))?;
        iterations += 1;
        history.push((eta, p.eval.c));
        c_last = p.eval.c;
        warm.clone_from(&p.tables.raw);
        if (p.eval.c - budget).abs() <= opts.tolerance {
            return Ok(EtaSearch {
                outcome: EtaOutcome::Converged(p),
                iterations,
                history,
            });
        }
        if p.eval.c > budget {
            if p.eta > low.eta {
                low = p;
            }
        } else {
            high = Some(p);
        }
    }
    let mut high = high.expect("bracket found");
    while high.eta - low.eta > opts.eta_tolerance * high.eta.max(1.0) {
        if iterations >= opts.max_iterations {
            break;
        }
        let mid = 0.5 * (low.eta + high.eta);
        let p = solve_point(mdp, mid, &opts.rvi, Some(&high.tables.raw))?;
        iterations += 1;
        history.push((mid, p.eval.c));
        if (p.eval.c - budget).abs() <= opts.tolerance {
            return Ok(EtaSearch {
                outcome: EtaOutcome::Converged(p),
                iterations,
                history,
            });
        }
        if p.eval.c > budget {
            low = p;
        } else {
            high = p;
        }
    }
    Ok(EtaSearch {
        outcome: EtaOutcome::Bracketed { low, high },
        iterations,
        history,
    })
}

/// Budget-meeting policy from two deterministic policies with
/// `C(low) >= lambda >= C(high)`.
///
/// States where the policies disagree are switched from `low` to `high` one at
/// a time in index order; the first switch that takes `C` to or below the
/// budget becomes the randomized state. If an intermediate policy cannot be
/// evaluated the result falls back to time-sharing.
pub fn build_mixture(
    mdp: &CompiledMdp,
    low: &DeterministicPolicy,
    high: &DeterministicPolicy,
    budget: f64,
) -> Result<(ConstrainedPolicy, EvaluationResult)> {
    const EXACT: f64 = 1e-9;
    let e_low = evaluate_exact(mdp, low)?;
    let e_high = evaluate_exact(mdp, high)?;
    if e_low.c < budget - EXACT || e_high.c > budget + EXACT {
        return Err(Error::MixturePrecondition {
            c_low: e_low.c,
            c_high: e_high.c,
            budget,
        });
    }
    if (e_low.c - budget).abs() <= EXACT {
        return Ok((ConstrainedPolicy::Deterministic(low.clone()), e_low));
    }
    if (e_high.c - budget).abs() <= EXACT {
        return Ok((ConstrainedPolicy::Deterministic(high.clone()), e_high));
    }
    let time_sharing = || {
        let mu = (budget - e_high.c) / (e_low.c - e_high.c);
        let p = ConstrainedPolicy::TimeSharing(TimeSharingPolicy::new(low.clone(), high.clone(), mu));
        let e = p.evaluate(mdp)?;
        Ok((p, e))
    };
    let mut current = low.clone();
    let mut c_current = e_low.c;
    for s in low.disagreements(high)? {
        let mut next = current.clone();
        next.set_action(s, high.action(s));
        let c_next = match evaluate_exact(mdp, &next) {
            Ok(e) => e.c,
            Err(Error::NotUnichain { .. }) => return time_sharing(),
            Err(e) => return Err(e),
        };
        if c_next <= budget {
            let mix = MixturePolicy {
                base: current,
                state: s,
                alternative: high.action(s),
                mu: 0.5,
            };
            return match solve_mu(mdp, mix, c_current, c_next, budget) {
                Ok(r) => Ok(r),
                Err(Error::NotUnichain { .. }) => time_sharing(),
                Err(e) => Err(e),
            };
        }
        current = next;
        c_current = c_next;
    }
    time_sharing()
}

/// Mixing weight meeting the budget. `C(mu)` of a single-state mixture is a
/// ratio of affine functions of `mu`, so three evaluations determine it; a
/// short bisection polishes the result.
fn solve_mu(
    mdp: &CompiledMdp,
    mut mix: MixturePolicy,
    c_base: f64,
    c_alt: f64,
    budget: f64,
) -> Result<(ConstrainedPolicy, EvaluationResult)> {
    let eval_at = |mix: &mut MixturePolicy, mu: f64| -> Result<EvaluationResult> {
        mix.mu = mu;
        evaluate_mixture_exact(mdp, mix)
    };
    // C(mu) = (a + b mu) / (1 + d mu) with mu the weight of the base action.
    let a = c_alt;
    let c1 = c_base;
    let ch = eval_at(&mut mix, 0.5)?.c;
    let mut mu = 0.5;
    if (c1 - ch).abs() > 1e-15 {
        let d = (2.0 * ch - a - c1) / (c1 - ch);
        let b = c1 * (1.0 + d) - a;
        let denom = budget * d - b;
        if denom.abs() > 1e-15 {
            mu = ((a - budget) / denom).clamp(0.0, 1.0);
        }
    }
    let mut e = eval_at(&mut mix, mu)?;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut iter = 0;
    while (e.c - budget).abs() > 1e-9 && iter < 60 {
        if e.c > budget {
            hi = mu;
        } else {
            lo = mu;
        }
        mu = 0.5 * (lo + hi);
        e = eval_at(&mut mix, mu)?;
        iter += 1;
    }
    Ok((ConstrainedPolicy::Mixture(mix), e))
}

/// Multiplier, policy and evaluation of the constrained optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    pub eta: f64,
    pub policy: ConstrainedPolicy,
    pub eval: EvaluationResult,
    pub search: EtaSearch,
}

/// `eta` search followed by the mixture construction when needed.
pub fn solve_constrained(mdp: &CompiledMdp, budget: f64, opts: &EtaSearchOptions) -> Result<ConstrainedSolution> {
    let search = eta_search(mdp, budget, opts)?;
    let (eta, policy, eval) = match &search.outcome {
        EtaOutcome::Converged(p) => (p.eta, ConstrainedPolicy::Deterministic(p.policy.clone()), p.eval.clone()),
        EtaOutcome::Bracketed { low, high } => {
            let (policy, eval) = build_mixture(mdp, &low.policy, &high.policy, budget)?;
            (0.5 * (low.eta + high.eta), policy, eval)
        }
    };
    Ok(ConstrainedSolution {
        eta,
        policy,
        eval,
        search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::AoiModel;
    use crate::model::{ModelConfig, ProtocolSpec};

    fn single(p: f64, n: u32) -> CompiledMdp {
        let cfg = ModelConfig::uniform(1, n, 0, 1.0).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![p] }).unwrap();
        CompiledMdp::compile(&m).unwrap()
    }

    fn threshold(mdp: &CompiledMdp, gamma: u32) -> DeterministicPolicy {
        DeterministicPolicy::from_fn(mdp.shared_space(), |s| {
            if s.users[0].rx >= gamma {
                Action::New(0)
            } else {
                Action::Idle
            }
        })
    }

    #[test]
    fn full_budget_needs_no_price() {
        let mdp = single(0.3, 30);
        let s = eta_search(&mdp, 1.0, &EtaSearchOptions::default()).unwrap();
        assert_eq!(s.eta(), 0.0);
        assert!(matches!(s.outcome, EtaOutcome::Converged(_)));
    }

    #[test]
    fn third_budget_on_clean_channel() {
        let mdp = single(0.0, 20);
        let sol = solve_constrained(&mdp, 1.0 / 3.0, &EtaSearchOptions::default()).unwrap();
        assert!((sol.eval.c - 1.0 / 3.0).abs() < 1e-6);
        assert!((sol.eval.j - 2.0).abs() < 1e-6, "{}", sol.eval.j);
    }

    #[test]
    fn mixture_between_thresholds() {
        // Cycle lengths 2 and 3 mixed at age 2: C = 1 / (2 mu + 3 (1 - mu)) = 0.4 gives mu = 0.5.
        let mdp = single(0.0, 10);
        let (p, e) = build_mixture(&mdp, &threshold(&mdp, 2), &threshold(&mdp, 3), 0.4).unwrap();
        match &p {
            ConstrainedPolicy::Mixture(m) => {
                assert_eq!(m.override_state().ages(), vec![2]);
                assert!((m.mu - 0.5).abs() < 1e-6);
            }
            other => panic!("unexpected {}", other.construction()),
        }
        assert!((e.c - 0.4).abs() < 1e-6);
    }

    #[test]
    fn mixture_cost_interpolates() {
        let mdp = single(0.0, 10);
        let lo = threshold(&mdp, 2);
        let hi = threshold(&mdp, 3);
        let j_lo = evaluate_exact(&mdp, &lo).unwrap().j;
        let j_hi = evaluate_exact(&mdp, &hi).unwrap().j;
        for mu in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let m = MixturePolicy {
                base: lo.clone(),
                state: 1,
                alternative: Action::Idle,
                mu,
            };
            let j = evaluate_mixture_exact(&mdp, &m).unwrap().j;
            assert!(j >= j_lo - 1e-9 && j <= j_hi + 1e-9);
        }
    }

    #[test]
    fn identical_inputs_return_deterministic() {
        let mdp = single(0.0, 10);
        let p = threshold(&mdp, 2);
        let (c, e) = build_mixture(&mdp, &p, &p, 0.5).unwrap();
        assert_eq!(c.construction(), "deterministic");
        assert!((e.c - 0.5).abs() < 1e-9);
    }

    #[test]
    fn transmission_rate_monotone_in_price() {
        let cfg = ModelConfig::uniform(2, 8, 0, 1.0).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![0.4, 0.1] }).unwrap();
        let mdp = CompiledMdp::compile(&m).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..15 {
            let eta = f64::from(k) * 1.5;
            let (p, _) = rvi_solve(&mdp, eta, &RviOptions::default(), None).unwrap();
            let c = evaluate_exact(&mdp, &p).unwrap().c;
            assert!(c <= last + 1e-9, "C({eta}) = {c} > {last}");
            last = c;
        }
    }
}

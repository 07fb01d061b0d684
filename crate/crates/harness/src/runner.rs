//! Batch execution of a scenario over cases, policies and seeds.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use aoi_core::bounds::{lower_bound_arq, lower_bound_fr};
use aoi_core::evaluate::{mean_ci, EvaluationResult};
use aoi_core::index::{arms_of, GreedyPolicy, RoundRobinPolicy, WhittlePolicy};
use aoi_core::lagrange::{solve_constrained, ConstrainedPolicy, EtaSearchOptions};
use aoi_core::mdp::CompiledMdp;
use aoi_core::model::ProtocolSpec;
use aoi_core::{simulate, AoiModel, Policy, RunTrace};
use aoi_learners::dqn::{dqn_train, EpisodeStats, GreedyNetPolicy};
use aoi_learners::sarsa::sarsa_lfa_run;
use aoi_learners::ucrl2::{ucrl2_vi_run, ucrl2_whittle_run};

use crate::error::{LabError, Result};
use crate::scenario::{Case, PolicyKind, Scenario};

/// Seed of the Monte-Carlo runs that calibrate the Whittle multiplier; kept
/// apart from the evaluation seeds.
pub const CALIBRATION_SEED: u64 = u64::MAX;

/// `seed` column of aggregate rows.
pub const AGGREGATE: &str = "mean";
/// `policy` column of lower-bound rows.
pub const BOUND_POLICY: &str = "lower-bound";

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scenario_hash: String,
    pub case: String,
    /// Seed number, `mean` for aggregates, empty for bound rows.
    pub seed: String,
    pub policy: String,
    pub lambda: f64,
    pub users: usize,
    pub j: Option<f64>,
    pub c: Option<f64>,
    /// 95% half-width of `j` (aggregate rows only).
    pub ci: Option<f64>,
    pub bound: Option<f64>,
    /// `ok`, or the failure class and message.
    pub status: String,
}

/// Running averages of one run at evenly spaced checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub case: String,
    pub policy: String,
    pub seed: u64,
    pub step: u64,
    pub j: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub case: String,
    pub seed: u64,
    pub episode: usize,
    pub epsilon: f64,
    pub j: f64,
    pub c: f64,
    pub loss: f64,
}

/// Wall time of one (case, policy, seed) job; kept out of the CSV so reruns
/// stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub case: String,
    pub policy: String,
    pub seed: Option<u64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub curves: Vec<CurveRow>,
    pub episodes: Vec<EpisodeRow>,
    pub timings: Vec<Timing>,
    /// Failed (case, policy, seed) runs.
    pub failed: usize,
    pub total: usize,
    /// Multiplier used by each (case, planning policy).
    pub multipliers: Vec<(String, String, f64)>,
}

/// Lower bound for ARQ and FR HARQ; `None` for general HARQ.
pub fn case_bound(model: &AoiModel, lambda: f64) -> Result<Option<f64>> {
    let w = &model.config().weights;
    match model.protocol() {
        ProtocolSpec::StandardArq { error } => Ok(Some(lower_bound_arq(w, error, lambda)?)),
        ProtocolSpec::FrHarq { .. } => {
            let p: Vec<f64> = arms_of(model.config(), model.protocol())?.iter().map(|a| a.error()).collect();
            Ok(Some(lower_bound_fr(w, &p, lambda, model.block_len())?))
        }
        ProtocolSpec::GeneralHarq { .. } => Ok(None),
    }
}

/// Smallest multiplier whose Whittle policy keeps the simulated transmission
/// rate within `lambda`.
pub fn calibrate_whittle(model: &AoiModel, lambda: f64, horizon: u64) -> Result<f64> {
    let base = WhittlePolicy::from_model(model, 0.0)?;
    let rate = |eta: f64| -> Result<f64> {
        let mut p = WhittlePolicy::new(base.arms.clone(), eta);
        Ok(simulate(model, &mut p, horizon, CALIBRATION_SEED, false)?.tx_rate())
    };
    if lambda >= 1.0 || rate(0.0)? <= lambda {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while rate(hi)? > lambda {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(LabError::Scenario(format!("no Whittle multiplier meets budget {lambda}")));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-9 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Per (case, policy) preparation shared by every seed.
#[derive(Clone)]
enum Prepared {
    Constrained(ConstrainedPolicy),
    Whittle(WhittlePolicy),
    Plain,
}

fn prepare(scenario: &Scenario, case: &Case, kind: PolicyKind) -> Result<(Prepared, Option<f64>)> {
    match kind {
        PolicyKind::Rvi => {
            let mdp = CompiledMdp::compile(&case.model)?;
            let opts = EtaSearchOptions {
                rvi: scenario.solver.rvi(),
                ..EtaSearchOptions::default()
            };
            let sol = solve_constrained(&mdp, case.lambda, &opts)?;
            Ok((Prepared::Constrained(sol.policy), Some(sol.eta)))
        }
        PolicyKind::Whittle => {
            let eta = calibrate_whittle(&case.model, case.lambda, scenario.run.calibration_horizon)?;
            Ok((Prepared::Whittle(WhittlePolicy::from_model(&case.model, eta)?), Some(eta)))
        }
        _ => Ok((Prepared::Plain, None)),
    }
}

/// Result of one seed: the trace plus any learner statistics.
struct SeedRun {
    trace: RunTrace,
    episodes: Vec<EpisodeStats>,
}

fn sim<P: Policy>(case: &Case, mut p: P, horizon: u64, seed: u64, keep: bool) -> Result<SeedRun> {
    Ok(SeedRun {
        trace: simulate(&case.model, &mut p, horizon, seed, keep)?,
        episodes: Vec::new(),
    })
}

fn run_seed(scenario: &Scenario, case: &Case, kind: PolicyKind, prep: &Prepared, seed: u64) -> Result<SeedRun> {
    let horizon = scenario.run.horizon;
    let keep = scenario.run.curve_points > 0;
    match (kind, prep) {
        (PolicyKind::Rvi, Prepared::Constrained(p)) => sim(case, p.clone(), horizon, seed, keep),
        (PolicyKind::Whittle, Prepared::Whittle(p)) => sim(case, p.clone(), horizon, seed, keep),
        (PolicyKind::Greedy, _) => sim(case, GreedyPolicy, horizon, seed, keep),
        (PolicyKind::RoundRobin, _) => sim(case, RoundRobinPolicy::new(), horizon, seed, keep),
        (PolicyKind::Ucrl2Vi | PolicyKind::Ucrl2Whittle, _) => {
            let mut cfg = scenario.ucrl2.clone();
            cfg.lambda = case.lambda;
            cfg.horizon = horizon;
            cfg.keep_records = keep;
            let run = if kind == PolicyKind::Ucrl2Vi {
                ucrl2_vi_run(&case.model, &cfg, &scenario.solver.rvi(), seed)?
            } else {
                ucrl2_whittle_run(&case.model, &cfg, seed)?
            };
            Ok(SeedRun {
                trace: run.trace,
                episodes: Vec::new(),
            })
        }
        (PolicyKind::SarsaLfa, _) => {
            let mut cfg = scenario.sarsa.clone();
            cfg.lambda = case.lambda;
            cfg.horizon = horizon;
            cfg.keep_records = keep;
            Ok(SeedRun {
                trace: sarsa_lfa_run(&case.model, &cfg, seed)?.trace,
                episodes: Vec::new(),
            })
        }
        (PolicyKind::Dqn, _) => {
            let run = dqn_train(&case.model, &scenario.dqn, scenario.run.dqn_episodes, seed)?;
            let policy = GreedyNetPolicy::new(&case.model, run.params)?;
            let mut out = sim(case, policy, horizon, seed, keep)?;
            out.episodes = run.stats;
            Ok(out)
        }
        _ => unreachable!("preparation matches the policy kind"),
    }
}

fn curve(trace: &RunTrace, points: usize) -> Vec<(u64, f64, f64)> {
    let n = trace.records.len();
    if points == 0 || n == 0 {
        return Vec::new();
    }
    let marks: Vec<usize> = (1..=points).map(|k| (k * n).div_ceil(points)).collect();
    let (mut aoi, mut tx, mut slots) = (0.0, 0.0, 0u64);
    let mut out = Vec::with_capacity(points);
    let mut next = 0;
    for (i, r) in trace.records.iter().enumerate() {
        aoi += r.cost.aoi_cost;
        tx += r.cost.tx_cost;
        slots += u64::from(r.slots);
        while next < marks.len() && marks[next] == i + 1 {
            out.push((i as u64 + 1, aoi / slots as f64, tx / slots as f64));
            next += 1;
        }
    }
    out
}

/// Policies that apply to a case: budget-blind heuristics only at `lambda = 1`.
pub fn applicable(kind: PolicyKind, lambda: f64) -> bool {
    !kind.ignores_budget() || lambda >= 1.0
}

fn fmt_err(e: &LabError) -> String {
    format!("failed({}): {}", e.category(), e)
}

/// Runs every (case, policy, seed) on the current rayon pool. Individual
/// failures are recorded in the status column.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    let hash = scenario.hash();
    let cases = scenario.cases()?;
    let seeds = scenario.seeds();
    let pairs: Vec<(usize, PolicyKind)> = cases
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            scenario
                .run
                .policies
                .iter()
                .filter(move |k| applicable(**k, c.lambda))
                .map(move |k| (ci, *k))
        })
        .collect();

    let prepared: Vec<(Result<(Prepared, Option<f64>)>, f64)> = pairs
        .par_iter()
        .map(|&(ci, kind)| {
            let t = Instant::now();
            (prepare(scenario, &cases[ci], kind), t.elapsed().as_secs_f64())
        })
        .collect();

    let jobs: Vec<(usize, u64)> = (0..pairs.len())
        .flat_map(|pi| seeds.iter().map(move |&s| (pi, s)))
        .collect();
    let results: Vec<(Result<SeedRun>, f64)> = jobs
        .par_iter()
        .map(|&(pi, seed)| {
            let (ci, kind) = pairs[pi];
            let t = Instant::now();
            let r = match &prepared[pi].0 {
                Ok((prep, _)) => run_seed(scenario, &cases[ci], kind, prep, seed),
                Err(e) => Err(LabError::Scenario(format!("preparation failed: {e}"))),
            };
            (r, t.elapsed().as_secs_f64())
        })
        .collect();

    let mut out = RunOutput {
        total: jobs.len(),
        ..RunOutput::default()
    };
    let mut bounds = Vec::with_capacity(cases.len());
    for c in &cases {
        bounds.push(case_bound(&c.model, c.lambda)?);
    }
    for (pi, &(ci, kind)) in pairs.iter().enumerate() {
        let case = &cases[ci];
        let (prep, secs) = &prepared[pi];
        out.timings.push(Timing {
            case: case.label.clone(),
            policy: kind.to_string(),
            seed: None,
            seconds: *secs,
        });
        if let Ok((_, Some(eta))) = prep {
            out.multipliers.push((case.label.clone(), kind.to_string(), *eta));
        }
        let row = |seed: String, j: Option<f64>, c: Option<f64>, half: Option<f64>, status: String| ResultRow {
            scenario_hash: hash.clone(),
            case: case.label.clone(),
            seed,
            policy: kind.to_string(),
            lambda: case.lambda,
            users: case.users,
            j,
            c,
            ci: half,
            bound: bounds[ci],
            status,
        };
        let mut js = Vec::new();
        let mut cs = Vec::new();
        for (si, &seed) in seeds.iter().enumerate() {
            let (res, secs) = &results[pi * seeds.len() + si];
            out.timings.push(Timing {
                case: case.label.clone(),
                policy: kind.to_string(),
                seed: Some(seed),
                seconds: *secs,
            });
            match res {
                Ok(run) => {
                    let (j, c) = (run.trace.avg_aoi(), run.trace.tx_rate());
                    js.push(j);
                    cs.push(c);
                    out.rows.push(row(seed.to_string(), Some(j), Some(c), None, "ok".into()));
                    for (step, j, c) in curve(&run.trace, scenario.run.curve_points) {
                        out.curves.push(CurveRow {
                            case: case.label.clone(),
                            policy: kind.to_string(),
                            seed,
                            step,
                            j,
                            c,
                        });
                    }
                    out.episodes.extend(run.episodes.iter().map(|e| EpisodeRow {
                        case: case.label.clone(),
                        seed,
                        episode: e.episode,
                        epsilon: e.epsilon,
                        j: e.avg_aoi,
                        c: e.tx_rate,
                        loss: e.mean_loss,
                    }));
                }
                Err(e) => {
                    out.failed += 1;
                    out.rows.push(row(seed.to_string(), None, None, None, fmt_err(e)));
                }
            }
        }
        if js.is_empty() {
            out.rows.push(row(AGGREGATE.into(), None, None, None, "failed(error): no successful seeds".into()));
        } else {
            let (j, half) = mean_ci(&js);
            let (c, _) = mean_ci(&cs);
            let status = if js.len() == seeds.len() {
                "ok".to_string()
            } else {
                format!("partial: {} of {} seeds", js.len(), seeds.len())
            };
            out.rows.push(row(AGGREGATE.into(), Some(j), Some(c), half.is_finite().then_some(half), status));
        }
    }
    for (ci, case) in cases.iter().enumerate() {
        if let Some(b) = bounds[ci] {
            out.rows.push(ResultRow {
                scenario_hash: hash.clone(),
                case: case.label.clone(),
                seed: String::new(),
                policy: BOUND_POLICY.into(),
                lambda: case.lambda,
                users: case.users,
                j: Some(b),
                c: Some(case.lambda),
                ci: None,
                bound: Some(b),
                status: "ok".into(),
            });
        }
    }
    Ok(out)
}

/// Exact evaluation of the constrained optimum of one case.
pub fn solve_case(scenario: &Scenario, case: &Case) -> Result<(f64, ConstrainedPolicy, EvaluationResult, CompiledMdp)> {
    let mdp = CompiledMdp::compile(&case.model)?;
    let opts = EtaSearchOptions {
        rvi: scenario.solver.rvi(),
        ..EtaSearchOptions::default()
    };
    let sol = solve_constrained(&mdp, case.lambda, &opts)?;
    Ok((sol.eta, sol.policy, sol.eval, mdp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use aoi_core::model::ModelConfig;

    fn arq(p: &[f64], n: u32) -> AoiModel {
        let cfg = ModelConfig::uniform(p.len(), n, 0, 1.0).unwrap();
        AoiModel::new(cfg, ProtocolSpec::StandardArq { error: p.to_vec() }).unwrap()
    }

    #[test]
    fn whittle_calibration_meets_budget() {
        let m = arq(&[0.5, 0.2, 0.1], 30);
        let eta = calibrate_whittle(&m, 0.5, 5_000).unwrap();
        assert!(eta > 0.0);
        let mut p = WhittlePolicy::from_model(&m, eta).unwrap();
        let c = simulate(&m, &mut p, 5_000, CALIBRATION_SEED, false).unwrap().tx_rate();
        assert!(c <= 0.5, "{c}");
        let mut p = WhittlePolicy::from_model(&m, eta * 0.99).unwrap();
        let c = simulate(&m, &mut p, 5_000, CALIBRATION_SEED, false).unwrap().tx_rate();
        assert!(c > 0.5, "{c}");
        assert_eq!(calibrate_whittle(&m, 1.0, 100).unwrap(), 0.0);
    }

    #[test]
    fn bounds_per_protocol() {
        assert_eq!(case_bound(&arq(&[0.5], 10), 1.0).unwrap(), Some(2.0));
        let cfg = ModelConfig::uniform(1, 10, 2, 1.0).unwrap();
        let h = AoiModel::new(cfg, ProtocolSpec::harq_geometric(&[0.5], 0.5, 2)).unwrap();
        assert_eq!(case_bound(&h, 1.0).unwrap(), None);
    }

    #[test]
    fn curve_checkpoints() {
        let m = arq(&[0.0, 0.0], 10);
        let t = simulate(&m, &mut RoundRobinPolicy::new(), 10, 0, true).unwrap();
        let pts = curve(&t, 5);
        assert_eq!(pts.iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 4, 6, 8, 10]);
        assert!((pts[4].1 - t.avg_aoi()).abs() < 1e-12);
        assert_eq!(pts[4].2, 1.0);
    }
}

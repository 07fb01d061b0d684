//! Exact evaluation through stationary distributions and Monte-Carlo evaluation.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::kernel::AoiModel;
use crate::lagrange::MixturePolicy;
use crate::mdp::CompiledMdp;
use crate::rvi::DeterministicPolicy;
use crate::sim::{simulate, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo {
        /// 95% confidence half-widths of `j` and `c`.
        ci_j: f64,
        ci_c: f64,
        horizon: u64,
        seeds: Vec<u64>,
        /// Per-seed `(J, C)`.
        samples: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// Average weighted AoI per slot.
    pub j: f64,
    /// Average transmission rate per slot.
    pub c: f64,
    #[serde(skip)]
    pub stationary: Option<Vec<f64>>,
    pub method: Method,
}

impl EvaluationResult {
    /// Confidence half-width of `j` (zero for exact results).
    pub fn ci_j(&self) -> f64 {
        match &self.method {
            Method::Exact => 0.0,
            Method::MonteCarlo { ci_j, .. } => *ci_j,
        }
    }

    pub fn ci_c(&self) -> f64 {
        match &self.method {
            Method::Exact => 0.0,
            Method::MonteCarlo { ci_c, .. } => *ci_c,
        }
    }

    /// `J + eta * C`.
    pub fn lagrangian(&self, eta: f64) -> f64 {
        self.j + eta * self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryOptions {
    /// Accept once `|pi P - pi|_1` falls below this.
    pub tolerance: f64,
    /// Lazy power steps polishing the direct solution.
    pub max_iterations: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 20_000,
        }
    }
}

/// Per-state mixture of choices: `(choice position, weight)`.
type Row = Vec<(usize, f64)>;

fn deterministic_rows(mdp: &CompiledMdp, policy: &DeterministicPolicy) -> Result<Vec<Row>> {
    if policy.len() != mdp.num_states() {
        return Err(Error::SpaceMismatch);
    }
    (0..mdp.num_states())
        .map(|s| {
            mdp.choice_of(s, policy.action(s))
                .map(|i| vec![(i, 1.0)])
                .ok_or_else(|| Error::ActionMasked {
                    action: policy.action(s),
                    state: mdp.space().state(s).to_string(),
                })
        })
        .collect()
}

pub fn evaluate_exact(mdp: &CompiledMdp, policy: &DeterministicPolicy) -> Result<EvaluationResult> {
    evaluate_exact_with(mdp, policy, &StationaryOptions::default())
}

pub fn evaluate_exact_with(
    mdp: &CompiledMdp,
    policy: &DeterministicPolicy,
    opts: &StationaryOptions,
) -> Result<EvaluationResult> {
    evaluate_rows(mdp, &deterministic_rows(mdp, policy)?, opts)
}

/// Exact evaluation of a policy randomizing in a single state.
pub fn evaluate_mixture_exact(mdp: &CompiledMdp, mix: &MixturePolicy) -> Result<EvaluationResult> {
    let mut rows = deterministic_rows(mdp, &mix.base)?;
    let s = mix.state;
    let alt = mdp.choice_of(s, mix.alternative).ok_or_else(|| Error::ActionMasked {
        action: mix.alternative,
        state: mdp.space().state(s).to_string(),
    })?;
    let base = rows[s][0].0;
    rows[s] = if alt == base {
        vec![(base, 1.0)]
    } else {
        vec![(base, mix.mu), (alt, 1.0 - mix.mu)]
    };
    evaluate_rows(mdp, &rows, &StationaryOptions::default())
}

/// Closed classes of the induced chain as lists of state indices.
fn closed_classes(mdp: &CompiledMdp, rows: &[Row]) -> Vec<Vec<usize>> {
    let n = mdp.num_states();
    let mut edges = Vec::new();
    for (s, row) in rows.iter().enumerate() {
        let choices = mdp.choices(s);
        for &(i, w) in row {
            if w <= 0.0 {
                continue;
            }
            for o in mdp.outcomes(&choices[i]) {
                if o.prob > 0.0 {
                    edges.push((s as u32, o.next));
                }
            }
        }
    }
    let mut g: DiGraph<(), (), u32> = DiGraph::with_capacity(n, edges.len());
    for _ in 0..n {
        g.add_node(());
    }
    g.extend_with_edges(&edges);
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; n];
    for (k, c) in sccs.iter().enumerate() {
        for v in c {
            comp[v.index()] = k;
        }
    }
    let mut leaves = vec![true; sccs.len()];
    for &(a, b) in &edges {
        if comp[a as usize] != comp[b as usize] {
            leaves[comp[a as usize]] = false;
        }
    }
    let mut out: Vec<Vec<usize>> = sccs
        .into_iter()
        .zip(leaves)
        .filter(|(_, leaf)| *leaf)
        .map(|(c, _)| {
            let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    out.sort();
    out
}

fn reachable_from(mdp: &CompiledMdp, rows: &[Row], start: usize) -> Vec<bool> {
    let mut seen = vec![false; mdp.num_states()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        let choices = mdp.choices(s);
        for &(i, w) in &rows[s] {
            if w <= 0.0 {
                continue;
            }
            for o in mdp.outcomes(&choices[i]) {
                let t = o.next as usize;
                if o.prob > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    seen
}

fn evaluate_rows(mdp: &CompiledMdp, rows: &[Row], opts: &StationaryOptions) -> Result<EvaluationResult> {
    let n = mdp.num_states();
    let classes = closed_classes(mdp, rows);
    if classes.len() > 1 {
        let reach = reachable_from(mdp, rows, mdp.initial());
        let unreached = classes
            .iter()
            .filter(|c| !reach[c[0]])
            .map(|c| c.iter().copied().take(8).collect())
            .collect();
        return Err(Error::NotUnichain {
            classes: classes.len(),
            unreached,
        });
    }
    // Per-state expected cost, slots and transmissions under the row mixture.
    let mut cost = vec![0.0; n];
    let mut dur = vec![0.0; n];
    let mut tx = vec![0.0; n];
    let mut trans: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    for (s, row) in rows.iter().enumerate() {
        let choices = mdp.choices(s);
        let mut t = Vec::with_capacity(2 * row.len());
        for &(i, w) in row {
            let c = &choices[i];
            cost[s] += w * c.aoi_cost;
            dur[s] += w * c.duration;
            tx[s] += w * c.tx_slots;
            for o in mdp.outcomes(c) {
                if w * o.prob > 0.0 {
                    t.push((o.next, w * o.prob));
                }
            }
        }
        trans.push(t);
    }
    let mut pi = stationary_lu(n, &classes[0], &trans)?;
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, t) in trans.iter().enumerate() {
            let m = pi[s];
            if m == 0.0 {
                continue;
            }
            for &(to, p) in t {
                next[to as usize] += m * p;
            }
        }
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if residual <= opts.tolerance {
            break;
        }
        // Lazy step keeps the polish convergent on periodic chains.
        for (x, y) in pi.iter_mut().zip(&next) {
            *x = 0.5 * (*x + y);
        }
    }
    if residual > opts.tolerance {
        return Err(Error::StationaryNotConverged { residual });
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    let slots: f64 = pi.iter().zip(&dur).map(|(p, d)| p * d).sum();
    let j = pi.iter().zip(&cost).map(|(p, c)| p * c).sum::<f64>() / slots;
    let c = pi.iter().zip(&tx).map(|(p, c)| p * c).sum::<f64>() / slots;
    Ok(EvaluationResult {
        j,
        c,
        stationary: Some(pi),
        method: Method::Exact,
    })
}

/// Stationary distribution of the recurrent class by sparse LU. Pinning
/// `pi[class[0]] = 1` leaves the sparse system
/// `pi_i - sum_{j != 0} P_ji pi_j = P_0i` over the other states. Direct
/// solution matters because nearly decomposable chains (e.g. greedy
/// schedules that lock into one user order) defeat power iteration.
fn stationary_lu(n: usize, class: &[usize], trans: &[Vec<(u32, f64)>]) -> Result<Vec<f64>> {
    let k = class.len();
    if k == 1 {
        let mut pi = vec![0.0; n];
        pi[class[0]] = 1.0;
        return Ok(pi);
    }
    let mut local = vec![usize::MAX; n];
    for (i, &s) in class.iter().enumerate() {
        local[s] = i;
    }
    let mut rhs = Mat::<f64>::zeros(k - 1, 1);
    for &(to, p) in &trans[class[0]] {
        let i = local[to as usize];
        if i != 0 {
            rhs[(i - 1, 0)] += p;
        }
    }
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(3 * k);
    for (col, &s) in class.iter().enumerate().skip(1) {
        entries.push((col - 1, col - 1, 1.0));
        for &(to, p) in &trans[s] {
            let row = local[to as usize];
            if row != 0 && row != usize::MAX {
                entries.push((row - 1, col - 1, -p));
            }
        }
    }
    entries.sort_by_key(|e| (e.1, e.0));
    let mut merged: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(entries.len());
    for (r, c, v) in entries {
        match merged.last_mut() {
            Some(t) if t.row == r && t.col == c => t.val += v,
            _ => merged.push(Triplet::new(r, c, v)),
        }
    }
    let singular = |_| Error::StationaryNotConverged { residual: f64::NAN };
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(k - 1, k - 1, &merged).map_err(|_| singular(()))?;
    let lu = a.sp_lu().map_err(|_| singular(()))?;
    let b: Vec<f64> = (0..k - 1).map(|i| rhs[(i, 0)]).collect();
    lu.solve_in_place(rhs.as_mut());
    // Iterative refinement against the assembled triplets.
    for _ in 0..4 {
        let mut r = b.clone();
        for t in &merged {
            r[t.row] -= t.val * rhs[(t.col, 0)];
        }
        let norm: f64 = r.iter().map(|x| x.abs()).sum();
        if norm <= 1e-14 {
            break;
        }
        let mut d = Mat::<f64>::zeros(k - 1, 1);
        for (i, x) in r.iter().enumerate() {
            d[(i, 0)] = *x;
        }
        lu.solve_in_place(d.as_mut());
        for i in 0..k - 1 {
            rhs[(i, 0)] += d[(i, 0)];
        }
    }
    let mut pi = vec![0.0; n];
    pi[class[0]] = 1.0;
    for (i, &s) in class.iter().enumerate().skip(1) {
        pi[s] = rhs[(i - 1, 0)].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::StationaryNotConverged { residual: f64::NAN });
    }
    pi.iter_mut().for_each(|x| *x /= total);
    Ok(pi)
}

/// Mean and 95% Student-t half-width; infinite half-width for a single sample.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Simulates a fresh policy per seed for `horizon` slots.
pub fn evaluate_mc<P: Policy>(
    model: &AoiModel,
    mut make_policy: impl FnMut() -> P,
    horizon: u64,
    seeds: &[u64],
) -> Result<EvaluationResult> {
    if horizon == 0 || seeds.is_empty() {
        return Err(Error::InvalidConfig("need horizon >= 1 and at least one seed".into()));
    }
    let mut samples = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut policy = make_policy();
        let t = simulate(model, &mut policy, horizon, seed, false)?;
        samples.push((t.avg_aoi(), t.tx_rate()));
    }
    Ok(summarize_samples(samples, horizon, seeds.to_vec()))
}

/// Builds a Monte-Carlo result from per-seed `(J, C)` pairs.
pub fn summarize_samples(samples: Vec<(f64, f64)>, horizon: u64, seeds: Vec<u64>) -> EvaluationResult {
    let js: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let cs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (j, ci_j) = mean_ci(&js);
    let (c, ci_c) = mean_ci(&cs);
    EvaluationResult {
        j,
        c,
        stationary: None,
        method: Method::MonteCarlo {
            ci_j,
            ci_c,
            horizon,
            seeds,
            samples,
        },
    }
}

//! Closed-form lower bounds on the average weighted AoI of any policy.

use crate::error::{Error, Result};

fn check(weights: &[f64], errors: &[f64], lambda: f64) -> Result<()> {
    if weights.is_empty() || weights.len() != errors.len() {
        return Err(Error::InvalidConfig(format!(
            "{} weights and {} error probabilities",
            weights.len(),
            errors.len()
        )));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!("budget {lambda} outside (0, 1]")));
    }
    for (&w, &p) in weights.iter().zip(errors) {
        if !(w > 0.0 && w.is_finite()) || !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("need w > 0 and p in [0, 1), got w = {w}, p = {p}")));
        }
    }
    Ok(())
}

/// User minimizing `w p / (1 - p)`, lowest index on ties.
pub fn bound_selector(weights: &[f64], errors: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (j, (&w, &p)) in weights.iter().zip(errors).enumerate() {
        let v = w * p / (1.0 - p);
        if v < best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// Shared expression; `n` is the number of slots per transmission.
fn bound_core(weights: &[f64], errors: &[f64], lambda: f64, n: f64) -> f64 {
    let root: f64 = weights.iter().zip(errors).map(|(&w, &p)| (w / (1.0 - p)).sqrt()).sum();
    let j = bound_selector(weights, errors);
    let (w, p) = (weights[j], errors[j]);
    let total_w: f64 = weights.iter().sum();
    n / (2.0 * lambda) * root * root + lambda * n * w * p / (2.0 * (1.0 - p)) + (n - 0.5) * total_w
}

/// Lower bound under standard ARQ.
pub fn lower_bound_arq(weights: &[f64], errors: &[f64], lambda: f64) -> Result<f64> {
    check(weights, errors, lambda)?;
    Ok(bound_core(weights, errors, lambda, 1.0))
}

/// Lower bound under FR HARQ with block errors `fr_errors` and block length `block_len`.
pub fn lower_bound_fr(weights: &[f64], fr_errors: &[f64], lambda: f64, block_len: u32) -> Result<f64> {
    check(weights, fr_errors, lambda)?;
    if block_len == 0 {
        return Err(Error::InvalidConfig("block length must be positive".into()));
    }
    Ok(bound_core(weights, fr_errors, lambda, f64::from(block_len)))
}

/// Per-user budgets of the relaxed problem, proportional to `sqrt(w / (1 - p))`.
pub fn optimal_lambda_split(weights: &[f64], errors: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check(weights, errors, lambda)?;
    let roots: Vec<f64> = weights.iter().zip(errors).map(|(&w, &p)| (w / (1.0 - p)).sqrt()).collect();
    let total: f64 = roots.iter().sum();
    Ok(roots.iter().map(|r| lambda * r / total).collect())
}

//! Detectors and stage-cost integrands.

use nalgebra::DVector;

use crate::error::{Result, SjdeError};
use crate::model::CostWeights;

/// Output of a detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub index: usize,
    /// The two sides of the decision rule were exactly equal.
    pub tie_broken: bool,
    /// Log-domain margin of the winning side (diagnostic only).
    pub score_margin: f64,
}

/// `Δ^{ij}` of a binary problem, indexed `[i][j]`.
pub type BinaryDeltas = [[f64; 2]; 2];

/// `(A, B)` with the optimum detector deciding 1 iff `L·A ≥ B`:
/// `A = a1 + b10Δ10 − b11Δ11`, `B = a0 + b01Δ01 − b00Δ00`.
pub fn decision_coefficients(delta: &BinaryDeltas, w: &CostWeights) -> (f64, f64) {
    let a = w.a(1) + w.b(1, 0) * delta[1][0] - w.b(1, 1) * delta[1][1];
    let b = w.a(0) + w.b(0, 1) * delta[0][1] - w.b(0, 0) * delta[0][0];
    (a, b)
}

/// Signed log-magnitude: `(sign, ln|x|)`.
fn signed_log(x: f64) -> (i8, f64) {
    if x > 0.0 {
        (1, x.ln())
    } else if x < 0.0 {
        (-1, (-x).ln())
    } else {
        (0, f64::NEG_INFINITY)
    }
}

/// Compares `lhs` and `rhs` given in signed-log form. Returns the log-domain
/// margin, positive when `lhs > rhs`, `±∞` when the signs differ.
fn compare_signed(lhs: (i8, f64), rhs: (i8, f64)) -> f64 {
    match (lhs.0, rhs.0) {
        (0, 0) => 0.0,
        (a, b) if a != b => {
            if a > b {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
        (1, 1) => lhs.1 - rhs.1,
        _ => rhs.1 - lhs.1,
    }
}

/// Optimum binary detector: 1 iff `L·A ≥ B`. Equality decides 1.
pub fn decide_binary(log_lr: f64, delta: &BinaryDeltas, weights: &CostWeights) -> Decision {
    let (a, b) = decision_coefficients(delta, weights);
    let (sa, la) = signed_log(a);
    let lhs = if log_lr == f64::NEG_INFINITY { (0, f64::NEG_INFINITY) } else { (sa, la + log_lr) };
    let mut margin = compare_signed(lhs, signed_log(b));
    if margin.is_nan() {
        margin = 0.0;
    }
    Decision {
        index: usize::from(margin >= 0.0),
        tie_broken: margin == 0.0,
        score_margin: margin,
    }
}

/// Per-measure parts `(g0, g1)` of the posterior cost at decision `d`; the
/// optimal cost is `E_0[g0] + E_1[g1]`.
pub fn split_stage_cost(d: usize, delta: &BinaryDeltas, w: &CostWeights) -> (f64, f64) {
    if d == 1 {
        (w.a(0) + w.b(0, 1) * delta[0][1], w.b(1, 1) * delta[1][1])
    } else {
        (w.b(0, 0) * delta[0][0], w.a(1) + w.b(1, 0) * delta[1][0])
    }
}

fn times_lr(lr: f64, c: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        lr * c
    }
}

/// `{B − A·L}^− + a1 + b00Δ00 + b10·L·Δ10`, whose `H_0`-expectation is the
/// optimal cost. With zero off-diagonal weights this is the separated form.
pub fn stage_cost_integrand(log_lr: f64, delta: &BinaryDeltas, w: &CostWeights) -> f64 {
    let (a, b) = decision_coefficients(delta, w);
    let lr = log_lr.exp();
    let bracket = b - times_lr(lr, a);
    bracket.min(0.0) + w.a(1) + w.b(0, 0) * delta[0][0] + times_lr(lr, w.b(1, 0) * delta[1][0])
}

/// The `{·}^−` part of [`stage_cost_integrand`] alone.
pub fn negative_part(log_lr: f64, delta: &BinaryDeltas, w: &CostWeights) -> f64 {
    let (a, b) = decision_coefficients(delta, w);
    (b - times_lr(log_lr.exp(), a)).min(0.0)
}

/// Score factors `c_j = a_j − b_jj·Δ^j` of the multi-hypothesis detector.
pub fn score_factors(delta_diag: &[f64], w: &CostWeights) -> Vec<f64> {
    delta_diag
        .iter()
        .enumerate()
        .map(|(j, d)| w.a(j) - w.b(j, j) * d)
        .collect()
}

/// Ranks `c_j · p_j` with `p_j = exp(ℓ_j)`: it is the argmax in the linear
/// domain, with positive factors compared in logs, then zero factors, then
/// negative factors by the smaller `|c_j|·p_j`. Ties go to the lowest index.
pub fn argmax_scores(factors: &[f64], log_likelihoods: &[f64]) -> Decision {
    let key = |j: usize| -> (i8, f64) {
        let c = factors[j];
        if c > 0.0 {
            (2, c.ln() + log_likelihoods[j])
        } else if c == 0.0 {
            (1, 0.0)
        } else {
            (0, -((-c).ln() + log_likelihoods[j]))
        }
    };
    let mut best = 0;
    let mut best_key = key(0);
    let mut runner: Option<(i8, f64)> = None;
    for j in 1..factors.len() {
        let k = key(j);
        if k.0 > best_key.0 || (k.0 == best_key.0 && k.1 > best_key.1) {
            runner = Some(best_key);
            best = j;
            best_key = k;
        } else if runner.is_none_or(|r| k.0 > r.0 || (k.0 == r.0 && k.1 > r.1)) {
            runner = Some(k);
        }
    }
    let margin = match runner {
        None => f64::INFINITY,
        Some(r) if r.0 == best_key.0 => best_key.1 - r.1,
        Some(_) => f64::INFINITY,
    };
    Decision {
        index: best,
        tie_broken: margin == 0.0,
        score_margin: margin,
    }
}

/// Multi-hypothesis detector `argmax_j (a_j − b_jΔ^j)·p_j`.
pub fn decide_multi(log_likelihoods: &[f64], delta_diag: &[f64], weights: &CostWeights) -> Result<Decision> {
    let k = weights.hypothesis_count();
    if log_likelihoods.len() != k || delta_diag.len() != k {
        return Err(SjdeError::DimensionMismatch {
            what: "per-hypothesis scores",
            expected: k,
            got: log_likelihoods.len().min(delta_diag.len()),
        });
    }
    Ok(argmax_scores(&score_factors(delta_diag, weights), log_likelihoods))
}

/// Realized Bayes-cost contribution of one run:
/// `a_i·1{d ≠ i} + b_{i,d}·‖x̂ − x‖²`.
///
/// Deciding a point-mass null reports its value, so pass that as `x̂`.
pub fn realized_cost(truth: usize, decision: usize, x: &DVector<f64>, x_hat: &DVector<f64>, w: &CostWeights) -> f64 {
    let detection = if decision != truth { w.a(truth) } else { 0.0 };
    let b = w.b(truth, decision);
    let estimation = if b == 0.0 { 0.0 } else { b * (x_hat - x).norm_squared() };
    detection + estimation
}

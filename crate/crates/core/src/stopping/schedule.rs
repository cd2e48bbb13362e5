//! Offline stopping schedules for models whose observation matrices are
//! known in advance.
//!
//! With fixed matrices the posterior covariances, and hence the optimal
//! cost, do not depend on the data, so the stopping time is a number that
//! can be computed before any sample arrives.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::cost::{estimate_optimal_cost, CostEstimate, REPLICATE_BLOCK};
use crate::error::{Result, SjdeError};
use crate::linalg::{self, SpdFactor};
use crate::model::{CostStructure, CostWeights, LqgModel, ObservationSource};
use crate::policy::argmax_scores;
use crate::seed;

/// Matrix hypothesis `k` sees at time `t` (1-based), for fixed-matrix
/// sources.
pub(crate) fn candidate_matrix(model: &LqgModel, k: usize, t: usize) -> Option<&DMatrix<f64>> {
    match model.observations() {
        ObservationSource::PerHypothesis { matrices } => Some(&matrices[k]),
        ObservationSource::Cyclic { matrices } => Some(&matrices[(t - 1) % matrices.len()]),
        _ => None,
    }
}

/// Whether the schedule uses the multi-hypothesis simulator (rather than
/// the binary cost estimator at the deterministic `U_t`).
pub(crate) fn uses_multi_path(model: &LqgModel) -> bool {
    !model.is_binary() || matches!(model.observations(), ObservationSource::PerHypothesis { .. })
}

fn require_fixed(model: &LqgModel) -> Result<()> {
    match model.observations() {
        ObservationSource::PerHypothesis { .. } | ObservationSource::Cyclic { .. } => Ok(()),
        _ => Err(SjdeError::InvalidConfig(
            "a deterministic schedule needs fixed observation matrices".into(),
        )),
    }
}

pub(crate) fn require_multi(model: &LqgModel, weights: &CostWeights) -> Result<()> {
    require_fixed(model)?;
    model.check_weights(weights)?;
    if weights.structure() == CostStructure::Combined {
        return Err(SjdeError::InvalidConfig(
            "multi-hypothesis problems need zero off-diagonal estimation weights".into(),
        ));
    }
    Ok(())
}

/// `U_k(t)` for `t = 0..=t_max` (index `t`).
fn fisher_sequence(model: &LqgModel, k: usize, t_max: usize) -> Vec<DMatrix<f64>> {
    let n = model.n();
    let mut out = Vec::with_capacity(t_max + 1);
    let mut u = DMatrix::zeros(n, n);
    out.push(u.clone());
    for t in 1..=t_max {
        let h = candidate_matrix(model, k, t).expect("fixed matrices");
        u += linalg::symmetrize(&h.tr_mul(h));
        out.push(u.clone());
    }
    out
}

/// `Δ_t^j = Tr (U_j(t)/σ² + Σ_j⁻¹)⁻¹` for `t = 0..=t_max`, indexed `[t][j]`.
pub fn mmse_schedule(model: &LqgModel, t_max: usize) -> Result<Vec<Vec<f64>>> {
    require_fixed(model)?;
    let k = model.hypothesis_count();
    let mut out = vec![vec![0.0; k]; t_max + 1];
    for j in 0..k {
        let prior = model.prior(j);
        if prior.is_point_mass() {
            continue;
        }
        for (t, u) in fisher_sequence(model, j, t_max).iter().enumerate() {
            let p = linalg::symmetrize(&(u / model.noise_variance() + &prior.cache().precision));
            out[t][j] = SpdFactor::new(&p)?.inverse().trace();
        }
    }
    Ok(out)
}

/// Per-time, per-hypothesis evidence kernel.
struct EvidenceKernel {
    point_mass: bool,
    /// Row-major `(U/σ² + Σ⁻¹)⁻¹`, or `μ` for a point mass.
    gain: Vec<f64>,
    offset: Vec<f64>,
    constant: f64,
}

impl EvidenceKernel {
    fn new(model: &LqgModel, k: usize, u: &DMatrix<f64>) -> Result<Self> {
        let prior = model.prior(k);
        let sigma2 = model.noise_variance();
        let mu = prior.mean();
        if prior.is_point_mass() {
            return Ok(Self {
                point_mass: true,
                gain: Vec::new(),
                offset: mu.iter().copied().collect(),
                constant: -0.5 * mu.dot(&(u * mu)) / sigma2,
            });
        }
        let c = prior.cache();
        let p = linalg::symmetrize(&(u / sigma2 + &c.precision));
        let f = SpdFactor::new(&p)?;
        let g = f.inverse();
        let n = u.nrows();
        let gain = (0..n * n).map(|i| g[(i / n, i % n)]).collect();
        Ok(Self {
            point_mass: false,
            gain,
            offset: c.precision_mean.iter().copied().collect(),
            constant: -0.5 * c.mean_quad - 0.5 * c.log_det_cov - 0.5 * f.log_det(),
        })
    }

    fn log_evidence(&self, v: &[f64], sigma2: f64, b: &mut [f64]) -> f64 {
        let n = v.len();
        if self.point_mass {
            return self.offset.iter().zip(v).map(|(m, v)| m * v).sum::<f64>() / sigma2 + self.constant;
        }
        for i in 0..n {
            b[i] = v[i] / sigma2 + self.offset[i];
        }
        let mut quad = 0.0;
        for r in 0..n {
            let row = &self.gain[r * n..(r + 1) * n];
            let e: f64 = row.iter().zip(b.iter()).map(|(g, b)| g * b).sum();
            quad += b[r] * e;
        }
        0.5 * quad + self.constant
    }
}

/// Misclassification counts of the SJDE and weighted-ML detectors along
/// simulated paths, for `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurves {
    pub t_max: usize,
    /// Paths simulated under each hypothesis.
    pub replicates: usize,
    /// `[t][j]`: paths under `H_j` with `d_t ≠ j`, optimum detector.
    pub sjde_errors: Vec<Vec<u64>>,
    /// Same for the weighted-ML detector.
    pub ml_errors: Vec<Vec<u64>>,
    /// `Δ_t^j`, indexed `[t][j]`.
    pub mmse: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Sjde,
    WeightedMl,
}

impl ErrorCurves {
    fn counts(&self, detector: Detector) -> &Vec<Vec<u64>> {
        match detector {
            Detector::Sjde => &self.sjde_errors,
            Detector::WeightedMl => &self.ml_errors,
        }
    }

    /// `P_j(d_t ≠ j)`.
    pub fn error_probs(&self, t: usize, detector: Detector) -> Vec<f64> {
        self.counts(detector)[t]
            .iter()
            .map(|&c| c as f64 / self.replicates as f64)
            .collect()
    }

    /// `C_t = Σ_j (a_j − b_jΔ_t^j)·P_j(d_t ≠ j) + b_jΔ_t^j`.
    pub fn cost(&self, t: usize, weights: &CostWeights, detector: Detector) -> CostEstimate {
        let p = self.error_probs(t, detector);
        let r = self.replicates as f64;
        let mut mean = 0.0;
        let mut var = 0.0;
        for (j, &pj) in p.iter().enumerate() {
            let bd = weights.b(j, j) * self.mmse[t][j];
            let c = weights.a(j) - bd;
            mean += c * pj + bd;
            if self.replicates > 1 {
                var += c * c * pj * (1.0 - pj) / (r - 1.0);
            }
        }
        CostEstimate {
            mean,
            std_error: var.sqrt(),
            replicates: self.replicates * p.len(),
        }
    }

    /// `C_t` for `t = 1..=t_max`.
    pub fn cost_curve(&self, weights: &CostWeights, detector: Detector) -> Vec<CostEstimate> {
        (1..=self.t_max).map(|t| self.cost(t, weights, detector)).collect()
    }
}

/// Simulates `replicates` paths under every hypothesis up to `t_max` and
/// counts detector errors at each `t`.
pub fn simulate_error_curves(
    model: &LqgModel,
    weights: &CostWeights,
    t_max: usize,
    replicates: usize,
    seed: u64,
) -> Result<ErrorCurves> {
    require_multi(model, weights)?;
    let k = model.hypothesis_count();
    let n = model.n();
    let sigma2 = model.noise_variance();
    let sigma = sigma2.sqrt();
    let mmse = mmse_schedule(model, t_max)?;

    let mut kernels: Vec<Vec<EvidenceKernel>> = (0..=t_max).map(|_| Vec::with_capacity(k)).collect();
    for j in 0..k {
        for (t, u) in fisher_sequence(model, j, t_max).iter().enumerate() {
            kernels[t].push(EvidenceKernel::new(model, j, u)?);
        }
    }
    let sjde_factors: Vec<Vec<f64>> = mmse
        .iter()
        .map(|d| (0..k).map(|j| weights.a(j) - weights.b(j, j) * d[j]).collect())
        .collect();
    let ml_factors: Vec<f64> = (0..k).map(|j| weights.a(j)).collect();
    let matrices: Vec<Vec<&DMatrix<f64>>> = (1..=t_max)
        .map(|t| (0..k).map(|j| candidate_matrix(model, j, t).expect("fixed")).collect())
        .collect();

    let blocks = replicates.div_ceil(REPLICATE_BLOCK);
    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|j| (0..blocks).map(move |b| (j, b))).collect();
    let partials: Vec<(Vec<u64>, Vec<u64>)> = jobs
        .par_iter()
        .map(|&(truth, b)| {
            let mut sjde = vec![0u64; t_max + 1];
            let mut ml = vec![0u64; t_max + 1];
            let mut rng = seed::stream(seed, "schedule", (truth * blocks + b) as u64);
            let len = REPLICATE_BLOCK.min(replicates - b * REPLICATE_BLOCK);
            let mut v = vec![vec![0.0; n]; k];
            let mut ell = vec![0.0; k];
            let mut work = vec![0.0; n];
            let m = model.m();
            let mut y = DVector::zeros(m);
            for _ in 0..len {
                let x = model.prior(truth).sample(&mut rng);
                v.iter_mut().for_each(|vk| vk.iter_mut().for_each(|e| *e = 0.0));
                for t in 0..=t_max {
                    if t > 0 {
                        let ht = matrices[t - 1][truth];
                        y.copy_from(&(ht * &x));
                        for e in y.iter_mut() {
                            *e += sigma * rng.sample::<f64, _>(StandardNormal);
                        }
                        for (j, vk) in v.iter_mut().enumerate() {
                            let hj = matrices[t - 1][j];
                            for c in 0..n {
                                let mut s = 0.0;
                                for r in 0..hj.nrows() {
                                    s += hj[(r, c)] * y[r];
                                }
                                vk[c] += s;
                            }
                        }
                    }
                    for j in 0..k {
                        ell[j] = kernels[t][j].log_evidence(&v[j], sigma2, &mut work);
                    }
                    if argmax_scores(&sjde_factors[t], &ell).index != truth {
                        sjde[t] += 1;
                    }
                    if argmax_scores(&ml_factors, &ell).index != truth {
                        ml[t] += 1;
                    }
                }
            }
            (sjde, ml)
        })
        .collect();

    let mut sjde_errors = vec![vec![0u64; k]; t_max + 1];
    let mut ml_errors = vec![vec![0u64; k]; t_max + 1];
    for (&(truth, _), (s, m)) in jobs.iter().zip(&partials) {
        for t in 0..=t_max {
            sjde_errors[t][truth] += s[t];
            ml_errors[t][truth] += m[t];
        }
    }
    Ok(ErrorCurves {
        t_max,
        replicates,
        sjde_errors,
        ml_errors,
        mmse,
    })
}

/// `P_j(d_t ≠ j)` of the optimum detector at horizon `t` (`t = 0` means
/// no data).
pub fn estimate_error_probs(
    t: usize,
    model: &LqgModel,
    weights: &CostWeights,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(simulate_error_curves(model, weights, t, mc_samples, seed)?.error_probs(t, Detector::Sjde))
}

/// Optimal cost `C_t`, `t = 1..=t_max`, of a fixed-matrix model.
pub fn deterministic_cost_curve(
    model: &LqgModel,
    weights: &CostWeights,
    t_max: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<CostEstimate>> {
    require_fixed(model)?;
    if uses_multi_path(model) {
        let curves = simulate_error_curves(model, weights, t_max, mc_samples, seed)?;
        return Ok(curves.cost_curve(weights, Detector::Sjde));
    }
    let u = fisher_sequence(model, 0, t_max);
    (1..=t_max)
        .map(|t| estimate_optimal_cost(&u[t], model, weights, mc_samples, seed::derive_seed(seed, "schedule-binary", t as u64)))
        .collect()
}

/// First `t` with `C_t ≤ α`.
pub fn first_crossing(curve: &[CostEstimate], alpha: f64) -> Option<usize> {
    curve.iter().position(|c| c.mean <= alpha).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub stopping_time: usize,
    pub curve: Vec<CostEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleError {
    Unreachable {
        alpha: f64,
        t_max: usize,
        curve: Vec<CostEstimate>,
    },
    Model(SjdeError),
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleError::Unreachable { alpha, t_max, .. } => {
                write!(f, "{}", SjdeError::TargetUnreachable { alpha: *alpha, t_max: *t_max })
            }
            ScheduleError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScheduleError {}

impl From<SjdeError> for ScheduleError {
    fn from(e: SjdeError) -> Self {
        ScheduleError::Model(e)
    }
}

pub fn compute_deterministic_schedule(
    model: &LqgModel,
    weights: &CostWeights,
    alpha: f64,
    t_max: usize,
    mc_samples: usize,
    seed: u64,
) -> std::result::Result<Schedule, ScheduleError> {
    let curve = deterministic_cost_curve(model, weights, t_max, mc_samples, seed)?;
    match first_crossing(&curve, alpha) {
        Some(t) => Ok(Schedule {
            stopping_time: t,
            curve,
        }),
        None => Err(ScheduleError::Unreachable { alpha, t_max, curve }),
    }
}

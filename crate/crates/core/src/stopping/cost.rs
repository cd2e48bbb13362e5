//! Monte Carlo estimation of the optimal cost `C_t` of a binary problem.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{CostWeights, LqgModel, PosteriorMoments, PosteriorProvider};
use crate::policy::{decide_binary, split_stage_cost, BinaryDeltas};
use crate::posterior::{posterior_costs, LqgKernel};
use crate::seed;
use crate::stats::SampleMoments;

/// Replicates drawn from one random stream. Fixed, so estimates do not
/// depend on the thread count.
pub const REPLICATE_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicates: usize,
}

impl CostEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let m = SampleMoments::of(values);
        Self {
            mean: m.mean,
            std_error: m.std_error(),
            replicates: m.count,
        }
    }

    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            replicates: 1,
        }
    }
}

/// `Δ` of a replicate.
pub fn replicate_deltas(m: &PosteriorMoments, weights: &CostWeights, null_point_mass: bool) -> BinaryDeltas {
    posterior_costs(m.traces, m.mean_gap_sq(), m.log_lr, weights, null_point_mass)
}

/// Posterior cost of the optimum decision at one replicate, split by the
/// measure it is averaged under.
fn replicate_parts(m: &PosteriorMoments, weights: &CostWeights, pm: bool) -> (f64, f64) {
    let delta = replicate_deltas(m, weights, pm);
    let d = decide_binary(m.log_lr, &delta, weights);
    split_stage_cost(d.index, &delta, weights)
}

/// Optimal cost against any binary posterior provider.
///
/// Replicate `r` pairs one draw under `H_0` with one under `H_1` and
/// contributes `g0 + g1`, the parts of the posterior cost each measure
/// carries.
pub fn estimate_cost_with<P: PosteriorProvider>(
    provider: &P,
    weights: &CostWeights,
    mc_samples: usize,
    seed: u64,
) -> CostEstimate {
    let n = provider.dim();
    let pm = provider.null_is_point_mass();
    let blocks = mc_samples.div_ceil(REPLICATE_BLOCK);
    let values: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = seed::stream(seed, "cost", b as u64);
            let mut m = PosteriorMoments::zeros(n);
            let len = REPLICATE_BLOCK.min(mc_samples - b * REPLICATE_BLOCK);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                provider.sample_moments(0, &mut rng, &mut m);
                let (g0, _) = replicate_parts(&m, weights, pm);
                provider.sample_moments(1, &mut rng, &mut m);
                let (_, g1) = replicate_parts(&m, weights, pm);
                out.push(g0 + g1);
            }
            out
        })
        .collect();
    CostEstimate::from_samples(&values)
}

/// `C_t` at the Fisher statistic `u` of a binary LQG model.
pub fn estimate_optimal_cost(
    u: &DMatrix<f64>,
    model: &LqgModel,
    weights: &CostWeights,
    mc_samples: usize,
    seed: u64,
) -> Result<CostEstimate> {
    model.check_weights(weights)?;
    let kernel = LqgKernel::new(u, model)?;
    Ok(estimate_cost_with(&kernel, weights, mc_samples, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_cost_weights, HypothesisPrior, ObservationSource};

    fn demo() -> LqgModel {
        LqgModel::new(
            1.0,
            vec![
                HypothesisPrior::isotropic(vec![1.0; 3], 0.5).unwrap(),
                HypothesisPrior::isotropic(vec![-1.0; 3], 0.5).unwrap(),
            ],
            ObservationSource::Gaussian { rows: 1 },
        )
        .unwrap()
    }

    #[test]
    fn no_data_pure_detection_cost_is_exact() {
        let w = make_cost_weights(vec![0.5, 0.5], DMatrix::zeros(2, 2)).unwrap();
        let c = estimate_optimal_cost(&DMatrix::zeros(3, 3), &demo(), &w, 500, 3).unwrap();
        assert_eq!(c.mean, 0.5);
        assert_eq!(c.std_error, 0.0);
        assert_eq!(c.replicates, 500);
    }

    #[test]
    fn no_data_separated_cost() {
        // Tie at L = 1 decides 1: a0 + b11·Tr(Σ1) = 0.5 + 0.5·1.5.
        let w = CostWeights::separated(vec![0.5, 0.5], &[0.5, 0.5]).unwrap();
        let c = estimate_optimal_cost(&DMatrix::zeros(3, 3), &demo(), &w, 200, 3).unwrap();
        assert!((c.mean - 1.25).abs() < 1e-12);
    }

    #[test]
    fn singular_u_gives_finite_estimate() {
        let w = CostWeights::separated(vec![0.5, 0.5], &[0.5, 0.5]).unwrap();
        let u = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 0.0]));
        let c = estimate_optimal_cost(&u, &demo(), &w, 1000, 9).unwrap();
        assert!(c.mean.is_finite() && c.std_error.is_finite());
    }

    #[test]
    fn estimates_are_deterministic() {
        let w = CostWeights::separated(vec![0.5, 0.5], &[0.5, 0.5]).unwrap();
        let h = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 0.8, 1.5, 0.1, -0.4]);
        let u = h.tr_mul(&h);
        let a = estimate_optimal_cost(&u, &demo(), &w, 1000, 11).unwrap();
        let b = estimate_optimal_cost(&u, &demo(), &w, 1000, 11).unwrap();
        assert_eq!(a, b);
        let c = estimate_optimal_cost(&u, &demo(), &w, 1000, 12).unwrap();
        assert_ne!(a, c);
    }
}

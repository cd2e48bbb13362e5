#![allow(clippy::needless_range_loop)]

mod support;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sjde::model::{make_cost_weights, RunConfig};
use sjde::posterior::{mixture_estimate, summarize, SufficientStats};
use sjde::scenarios::lqg_demo_config;
use sjde::seed::derive_seed;
use sjde::stopping::{trial_truth, SimulatedSource, SjdeEngine};

#[test]
fn zero_estimation_weights_reduce_to_likelihood_ratio_test() {
    let mut cfg = lqg_demo_config().unwrap();
    cfg.weights = make_cost_weights(vec![0.4, 0.6], DMatrix::zeros(2, 2)).unwrap();
    let run = RunConfig::new(0.2, 300).unwrap();
    let engine = SjdeEngine::new(&cfg.model, &cfg.weights, &run).unwrap();
    let threshold = (0.4f64 / 0.6).ln();
    let mismatches: usize = (0..10_000u64)
        .into_par_iter()
        .map(|k| {
            let mut src = SimulatedSource::new(&cfg.model, trial_truth(k as usize, 2), derive_seed(5, "trial", k)).unwrap();
            let r = engine.run(&mut src, derive_seed(5, "engine", k)).unwrap();
            let lrt = usize::from(r.log_lr.unwrap() >= threshold);
            usize::from(lrt != r.decision.index)
        })
        .sum();
    assert_eq!(mismatches, 0);
}

#[test]
fn posterior_cost_decomposition_on_simulated_states() {
    let cfg = lqg_demo_config().unwrap();
    let combined = make_cost_weights(vec![0.5, 0.5], DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.3, 0.5])).unwrap();
    let mut rng = support::rng(31);
    for _ in 0..200 {
        let truth = rng.random_range(0..2);
        let x = cfg.model.prior(truth).sample(&mut rng);
        let mut stats = SufficientStats::zeros(3);
        for _ in 0..rng.random_range(1..25) {
            let h = DMatrix::from_fn(1, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_element(1, (&h * &x)[0] + rng.sample::<f64, _>(StandardNormal));
            stats.update(&h, &y).unwrap();
            for w in [&cfg.weights, &combined] {
                let s = summarize(&stats, &cfg.model, w).unwrap();
                let e = [&s.posteriors[0].mean, &s.posteriors[1].mean];
                for j in 0..2 {
                    let xh = mixture_estimate(e[0], e[1], s.log_lr, w.b(0, j), w.b(1, j)).unwrap_or_else(|| e[j].clone());
                    for i in 0..2 {
                        // Direct definition: E_i‖x̂_j − x‖² given the data.
                        let direct = s.posteriors[i].trace() + (&xh - e[i]).norm_squared();
                        let scale = direct.abs().max(1e-300);
                        assert!((s.delta[i][j] - direct).abs() <= 1e-12 * scale, "Δ[{i}][{j}]");
                    }
                }
            }
        }
    }
}

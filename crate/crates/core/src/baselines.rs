//! Reference schemes: SPRT followed by MMSE estimation, and the weighted
//! ML detector with MMSE estimation on a fixed horizon.

use rayon::prelude::*;

use crate::error::{Result, SjdeError};
use crate::model::{CostWeights, LqgModel};
use crate::policy::Decision;
use crate::posterior::condition;
use crate::seed;
use crate::stopping::cost::CostEstimate;
use crate::stopping::run::{run_horizon, summarize_trials, trial_truth, RealizedCost, StatsTracker};
use crate::stopping::{DataSource, RunResult, SimulatedSource};

/// Log-domain SPRT thresholds: continue while `−B < log L_t < A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprtThresholds {
    a: f64,
    b: f64,
}

impl SprtThresholds {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(SjdeError::InvalidConfig(format!(
                "SPRT thresholds must be positive, got A = {a}, B = {b}"
            )));
        }
        Ok(Self { a, b })
    }

    /// `A = B = scale`.
    pub fn symmetric(scale: f64) -> Result<Self> {
        Self::new(scale, scale)
    }

    pub fn upper(&self) -> f64 {
        self.a
    }

    pub fn lower(&self) -> f64 {
        self.b
    }
}

/// SPRT on `log L_t` followed by the MMSE estimator of the decided
/// hypothesis. On truncation the sign of `log L` decides.
pub fn run_sprt_mmse(
    model: &LqgModel,
    weights: &CostWeights,
    thresholds: SprtThresholds,
    source: &mut dyn DataSource,
    t_max: usize,
) -> Result<RunResult> {
    model.require_binary()?;
    model.check_weights(weights)?;
    if t_max == 0 {
        return Err(SjdeError::InvalidConfig("t_max must be at least 1".into()));
    }
    let sigma2 = model.noise_variance();
    let mut tracker = StatsTracker::new(model);
    for t in 1..=t_max {
        let obs = source.next_observation(t).ok_or(SjdeError::DataExhausted { t: t - 1 })?;
        tracker.update(model, t, &obs)?;
        let p0 = condition(tracker.get(0), model.prior(0), sigma2)?;
        let p1 = condition(tracker.get(1), model.prior(1), sigma2)?;
        let llr = p1.log_evidence - p0.log_evidence;
        let upper = llr >= thresholds.a;
        let lower = llr <= -thresholds.b;
        if upper || lower || t == t_max {
            let (index, margin) = if upper {
                (1, llr - thresholds.a)
            } else if lower {
                (0, -thresholds.b - llr)
            } else {
                (usize::from(llr >= 0.0), llr.abs())
            };
            let estimate = if index == 1 { p1.mean } else { p0.mean };
            let decision = Decision {
                index,
                tie_broken: !upper && !lower && llr == 0.0,
                score_margin: margin,
            };
            let realized = source
                .ground_truth()
                .map(|g| RealizedCost::of(g, index, &estimate, weights));
            return Ok(RunResult {
                stopping_time: t,
                decision,
                estimate,
                truncated: !upper && !lower,
                log_lr: Some(llr),
                log_likelihoods: vec![p0.log_evidence, p1.log_evidence],
                cost_trace: Vec::new(),
                extrapolated_lookups: 0,
                realized,
            });
        }
    }
    unreachable!("loop returns by t_max")
}

/// Weighted ML decision `argmax_j a_j p_j` after `horizon` samples, with
/// the MMSE estimator of the decided hypothesis.
pub fn run_ml_mmse(
    model: &LqgModel,
    weights: &CostWeights,
    horizon: usize,
    source: &mut dyn DataSource,
) -> Result<RunResult> {
    run_horizon(model, weights, horizon, source, true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub trials: usize,
    pub t_max: usize,
    /// Accepted band is `[α − band, α]`.
    pub band: f64,
    pub max_iterations: usize,
    /// Scales searched, `A = B = scale`.
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            trials: 10_000,
            t_max: crate::model::DEFAULT_T_MAX,
            band: 0.01,
            max_iterations: 40,
            min_scale: 1e-6,
            max_scale: 64.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprtCalibration {
    pub thresholds: SprtThresholds,
    /// Combined Bayes cost at the returned thresholds.
    pub achieved: CostEstimate,
    pub iterations: usize,
}

/// Combined Bayes cost of SPRT+MMSE at `thresholds` over seeded trials.
pub fn sprt_trial_cost(
    model: &LqgModel,
    weights: &CostWeights,
    thresholds: SprtThresholds,
    trials: usize,
    t_max: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let hyps = model.hypothesis_count();
    let results = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = seed::derive_seed(seed, "trial", k as u64);
            let mut src = SimulatedSource::new(model, trial_truth(k, hyps), s)?;
            run_sprt_mmse(model, weights, thresholds, &mut src, t_max)
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = summarize_trials(&results, hyps);
    Ok(CostEstimate {
        mean: sum.cost,
        std_error: sum.cost_stderr.unwrap_or(f64::NAN),
        replicates: trials,
    })
}

/// Bisection on a symmetric threshold scale until the trial cost lands in
/// `[α − band, α]`, with common random numbers across scales.
///
/// If the band is never hit the smallest scale found meeting `α` is
/// returned.
pub fn calibrate_sprt(
    model: &LqgModel,
    weights: &CostWeights,
    alpha: f64,
    options: &CalibrationOptions,
    seed: u64,
) -> Result<SprtCalibration> {
    let cost = |s: f64| -> Result<CostEstimate> {
        sprt_trial_cost(model, weights, SprtThresholds::symmetric(s)?, options.trials, options.t_max, seed)
    };
    let in_band = |c: &CostEstimate| c.mean <= alpha && c.mean >= alpha - options.band;
    let done = |s: f64, c: CostEstimate, iterations| -> Result<SprtCalibration> {
        Ok(SprtCalibration {
            thresholds: SprtThresholds::symmetric(s)?,
            achieved: c,
            iterations,
        })
    };

    let mut iterations = 1;
    let lo_cost = cost(options.min_scale)?;
    if lo_cost.mean <= alpha {
        return done(options.min_scale, lo_cost, iterations);
    }
    let mut lo = options.min_scale;
    let mut hi = options.min_scale.max(1.0);
    let mut hi_cost = cost(hi)?;
    iterations += 1;
    while hi_cost.mean > alpha {
        if hi >= options.max_scale {
            return Err(SjdeError::TargetUnreachable {
                alpha,
                t_max: options.t_max,
            });
        }
        lo = hi;
        hi = (hi * 2.0).min(options.max_scale);
        hi_cost = cost(hi)?;
        iterations += 1;
    }
    if in_band(&hi_cost) {
        return done(hi, hi_cost, iterations);
    }
    while iterations < options.max_iterations {
        let mid = (lo * hi).sqrt();
        let c = cost(mid)?;
        iterations += 1;
        if in_band(&c) {
            return done(mid, c, iterations);
        }
        if c.mean > alpha {
            lo = mid;
        } else {
            hi = mid;
            hi_cost = c;
        }
    }
    done(hi, hi_cost, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_cost_weights, HypothesisPrior, ObservationSource};
    use nalgebra::DMatrix;

    fn demo() -> (LqgModel, CostWeights) {
        let m = LqgModel::new(
            1.0,
            vec![
                HypothesisPrior::isotropic(vec![1.0; 3], 0.5).unwrap(),
                HypothesisPrior::isotropic(vec![-1.0; 3], 0.5).unwrap(),
            ],
            ObservationSource::Gaussian { rows: 1 },
        )
        .unwrap();
        (m, CostWeights::separated(vec![0.5, 0.5], &[0.5, 0.5]).unwrap())
    }

    #[test]
    fn thresholds_must_be_positive() {
        assert!(SprtThresholds::new(0.0, 1.0).is_err());
        assert!(SprtThresholds::new(1.0, -1.0).is_err());
        assert!(SprtThresholds::symmetric(2.0).is_ok());
    }

    #[test]
    fn vanishing_thresholds_stop_at_one() {
        let (m, w) = demo();
        let th = SprtThresholds::symmetric(1e-12).unwrap();
        for k in 0..50 {
            let mut src = SimulatedSource::new(&m, k % 2, k as u64).unwrap();
            let r = run_sprt_mmse(&m, &w, th, &mut src, 200).unwrap();
            assert_eq!(r.stopping_time, 1);
        }
    }

    #[test]
    fn identical_priors_truncate() {
        let p = HypothesisPrior::isotropic(vec![0.0; 2], 1.0).unwrap();
        let m = LqgModel::new(1.0, vec![p.clone(), p], ObservationSource::Gaussian { rows: 1 }).unwrap();
        let w = CostWeights::separated(vec![0.5, 0.5], &[0.5, 0.5]).unwrap();
        let mut src = SimulatedSource::new(&m, 0, 1).unwrap();
        let r = run_sprt_mmse(&m, &w, SprtThresholds::symmetric(1.0).unwrap(), &mut src, 30).unwrap();
        assert_eq!(r.stopping_time, 30);
        assert!(r.truncated);
        assert_eq!(r.log_lr, Some(0.0));
        assert_eq!(r.decision.index, 1);
    }

    #[test]
    fn sprt_decisions_respect_thresholds() {
        let (m, w) = demo();
        let th = SprtThresholds::new(2.0, 1.5).unwrap();
        for k in 0..200 {
            let mut src = SimulatedSource::new(&m, k % 2, 100 + k as u64).unwrap();
            let r = run_sprt_mmse(&m, &w, th, &mut src, 200).unwrap();
            let llr = r.log_lr.unwrap();
            if !r.truncated {
                if r.decision.index == 1 {
                    assert!(llr >= 2.0);
                } else {
                    assert!(llr <= -1.5);
                }
            }
        }
    }

    #[test]
    fn single_hypothesis_ml_is_forced() {
        let m = LqgModel::new(
            1.0,
            vec![HypothesisPrior::isotropic(vec![0.0; 2], 1.0).unwrap()],
            ObservationSource::PerHypothesis {
                matrices: vec![DMatrix::identity(2, 2)],
            },
        )
        .unwrap();
        let w = make_cost_weights(vec![0.2], DMatrix::from_element(1, 1, 0.8)).unwrap();
        let mut src = SimulatedSource::new(&m, 0, 3).unwrap();
        let r = run_ml_mmse(&m, &w, 4, &mut src).unwrap();
        assert_eq!(r.decision.index, 0);
        assert_eq!(r.stopping_time, 4);
        assert_eq!(r.realized.unwrap().detection, 0.0);
    }

    #[test]
    fn generous_target_gives_tiny_thresholds() {
        let (m, w) = demo();
        let opts = CalibrationOptions {
            trials: 200,
            ..CalibrationOptions::default()
        };
        let c = calibrate_sprt(&m, &w, 5.0, &opts, 1).unwrap();
        assert_eq!(c.thresholds.upper(), opts.min_scale);
    }
}

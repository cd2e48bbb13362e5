//! The sequential loop: accumulate, evaluate `C_t`, stop, decide, estimate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::cost::{estimate_optimal_cost, CostEstimate};
use super::grid::CostGrid;
use super::schedule::{candidate_matrix, deterministic_cost_curve, require_multi, uses_multi_path};
use crate::error::{Result, SjdeError};
use crate::model::{CostWeights, LqgModel, RunConfig, StoppingSourceKind};
use crate::policy::{decide_binary, decide_multi, realized_cost, Decision};
use crate::posterior::{condition, summarize, SufficientStats};
use crate::seed::{self, SimRng};
use crate::stats::SampleMoments;

/// One observation pair `(H_t, y_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// The hypothesis and parameter a simulated stream was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub hypothesis: usize,
    pub x: DVector<f64>,
}

pub trait DataSource {
    /// Observation at time `t` (1-based), or `None` when exhausted.
    fn next_observation(&mut self, t: usize) -> Option<Observation>;

    fn ground_truth(&self) -> Option<&GroundTruth> {
        None
    }
}

/// Draws `x` from the prior of `hypothesis` and then an endless stream of
/// observations.
pub struct SimulatedSource<'a> {
    model: &'a LqgModel,
    truth: GroundTruth,
    rng: SimRng,
}

impl<'a> SimulatedSource<'a> {
    pub fn new(model: &'a LqgModel, hypothesis: usize, seed: u64) -> Result<Self> {
        if hypothesis >= model.hypothesis_count() {
            return Err(SjdeError::InvalidConfig(format!("no hypothesis {hypothesis}")));
        }
        let x = model.prior(hypothesis).sample(&mut seed::stream(seed, "truth", 0));
        Ok(Self::with_parameter(model, hypothesis, x, seed))
    }

    /// Stream with a given parameter value.
    pub fn with_parameter(model: &'a LqgModel, hypothesis: usize, x: DVector<f64>, seed: u64) -> Self {
        Self {
            model,
            truth: GroundTruth { hypothesis, x },
            rng: seed::stream(seed, "observations", 0),
        }
    }
}

impl DataSource for SimulatedSource<'_> {
    fn next_observation(&mut self, t: usize) -> Option<Observation> {
        let n = self.model.n();
        let h = self.model.observations().draw(n, t, self.truth.hypothesis, &mut self.rng);
        let sigma = self.model.noise_variance().sqrt();
        let mut y = &h * &self.truth.x;
        for e in y.iter_mut() {
            *e += sigma * self.rng.sample::<f64, _>(StandardNormal);
        }
        Some(Observation { h, y })
    }

    fn ground_truth(&self) -> Option<&GroundTruth> {
        Some(&self.truth)
    }
}

/// Replays a recorded sequence.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    items: Vec<Observation>,
    truth: Option<GroundTruth>,
}

impl ReplaySource {
    pub fn new(items: Vec<Observation>) -> Self {
        Self { items, truth: None }
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Self {
        self.truth = Some(truth);
        self
    }
}

impl DataSource for ReplaySource {
    fn next_observation(&mut self, t: usize) -> Option<Observation> {
        self.items.get(t - 1).cloned()
    }

    fn ground_truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }
}

/// Realized Bayes-cost contribution of a run with known ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizedCost {
    pub truth: usize,
    pub detection: f64,
    pub estimation: f64,
}

impl RealizedCost {
    pub fn total(&self) -> f64 {
        self.detection + self.estimation
    }

    pub(crate) fn of(truth: &GroundTruth, decision: usize, estimate: &DVector<f64>, weights: &CostWeights) -> Self {
        let total = realized_cost(truth.hypothesis, decision, &truth.x, estimate, weights);
        let detection = if decision != truth.hypothesis {
            weights.a(truth.hypothesis)
        } else {
            0.0
        };
        Self {
            truth: truth.hypothesis,
            detection,
            estimation: total - detection,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub stopping_time: usize,
    pub decision: Decision,
    pub estimate: DVector<f64>,
    /// Stopped at `t_max` without meeting the target.
    pub truncated: bool,
    /// `log L_T` (binary problems).
    pub log_lr: Option<f64>,
    /// Reduced log-evidence of each hypothesis at `T`.
    pub log_likelihoods: Vec<f64>,
    /// `C_t` used at each `t ≤ T` (empty for schemes without one).
    pub cost_trace: Vec<CostEstimate>,
    /// Grid lookups that fell outside the grid.
    pub extrapolated_lookups: usize,
    pub realized: Option<RealizedCost>,
}

/// Tracks per-hypothesis statistics; hypotheses share them unless each
/// hypothesis has its own known matrix.
pub(crate) struct StatsTracker {
    per_hypothesis: bool,
    stats: Vec<SufficientStats>,
}

impl StatsTracker {
    pub(crate) fn new(model: &LqgModel) -> Self {
        let per_hypothesis = matches!(model.observations(), crate::model::ObservationSource::PerHypothesis { .. });
        let copies = if per_hypothesis { model.hypothesis_count() } else { 1 };
        Self {
            per_hypothesis,
            stats: vec![SufficientStats::zeros(model.n()); copies],
        }
    }

    pub(crate) fn update(&mut self, model: &LqgModel, t: usize, obs: &Observation) -> Result<()> {
        if self.per_hypothesis {
            for (k, s) in self.stats.iter_mut().enumerate() {
                let h = candidate_matrix(model, k, t).expect("per-hypothesis matrices");
                s.update(h, &obs.y)?;
            }
            Ok(())
        } else {
            self.stats[0].update(&obs.h, &obs.y)
        }
    }

    pub(crate) fn get(&self, k: usize) -> &SufficientStats {
        if self.per_hypothesis {
            &self.stats[k]
        } else {
            &self.stats[0]
        }
    }

    pub(crate) fn shared(&self) -> &SufficientStats {
        &self.stats[0]
    }
}

/// Optimum multi-hypothesis (or per-hypothesis-matrix) decision and
/// estimate.
pub(crate) fn decide_multi_at(
    model: &LqgModel,
    weights: &CostWeights,
    tracker: &StatsTracker,
    factors_ml: bool,
) -> Result<(Decision, DVector<f64>, Vec<f64>)> {
    let k = model.hypothesis_count();
    let mut posts = Vec::with_capacity(k);
    for j in 0..k {
        posts.push(condition(tracker.get(j), model.prior(j), model.noise_variance())?);
    }
    let ell: Vec<f64> = posts.iter().map(|p| p.log_evidence).collect();
    let decision = if factors_ml {
        decide_multi(&ell, &vec![0.0; k], weights)?
    } else {
        let traces: Vec<f64> = posts.iter().map(|p| p.trace()).collect();
        decide_multi(&ell, &traces, weights)?
    };
    let estimate = posts[decision.index].mean.clone();
    Ok((decision, estimate, ell))
}

/// The optimum sequential scheme for one model, weights and configuration.
pub struct SjdeEngine<'a> {
    model: &'a LqgModel,
    weights: &'a CostWeights,
    config: &'a RunConfig,
    grid: Option<&'a CostGrid>,
    schedule: Option<Vec<CostEstimate>>,
}

impl<'a> SjdeEngine<'a> {
    /// Validates the combination. A deterministic-schedule engine computes
    /// its cost curve here, once.
    pub fn new(model: &'a LqgModel, weights: &'a CostWeights, config: &'a RunConfig) -> Result<Self> {
        config.validate()?;
        config.check_weights(weights)?;
        model.check_weights(weights)?;
        let mut engine = Self {
            model,
            weights,
            config,
            grid: None,
            schedule: None,
        };
        match config.stopping_source {
            StoppingSourceKind::DeterministicSchedule => {
                engine.schedule = Some(deterministic_cost_curve(
                    model,
                    weights,
                    config.t_max,
                    config.mc_samples,
                    seed::derive_seed(config.master_seed, "schedule", 0),
                )?);
            }
            _ => {
                if uses_multi_path(model) {
                    return Err(SjdeError::InvalidConfig(
                        "multi-hypothesis problems stop on a deterministic schedule".into(),
                    ));
                }
            }
        }
        Ok(engine)
    }

    /// Engine that stops on an already computed schedule curve.
    pub fn with_schedule_curve(
        model: &'a LqgModel,
        weights: &'a CostWeights,
        config: &'a RunConfig,
        curve: Vec<CostEstimate>,
    ) -> Result<Self> {
        config.check_weights(weights)?;
        model.check_weights(weights)?;
        if curve.len() < config.t_max {
            return Err(SjdeError::InvalidConfig(format!(
                "schedule covers {} of {} steps",
                curve.len(),
                config.t_max
            )));
        }
        if uses_multi_path(model) {
            require_multi(model, weights)?;
        }
        Ok(Self {
            model,
            weights,
            config,
            grid: None,
            schedule: Some(curve),
        })
    }

    /// Attaches the grid a grid-lookup engine reads.
    pub fn with_grid(mut self, grid: &'a CostGrid) -> Result<Self> {
        grid.check_model(self.model, self.weights)?;
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn schedule_curve(&self) -> Option<&[CostEstimate]> {
        self.schedule.as_deref()
    }

    fn cost_at(&self, stats: &SufficientStats, t: usize, run_seed: u64, extrapolated: &mut usize) -> Result<CostEstimate> {
        if let Some(curve) = &self.schedule {
            return Ok(curve[t - 1]);
        }
        match self.config.stopping_source {
            StoppingSourceKind::GridLookup => {
                let grid = self
                    .grid
                    .ok_or_else(|| SjdeError::InvalidConfig("grid-lookup stopping needs a cost grid".into()))?;
                let hit = grid.lookup_cost(stats.u());
                *extrapolated += usize::from(hit.extrapolated);
                Ok(hit.estimate)
            }
            _ => estimate_optimal_cost(
                stats.u(),
                self.model,
                self.weights,
                self.config.mc_samples,
                seed::derive_seed(run_seed, "online-cost", t as u64),
            ),
        }
    }

    fn finish(
        &self,
        tracker: &StatsTracker,
        t: usize,
        truncated: bool,
        trace: &[CostEstimate],
        extrapolated: usize,
        truth: Option<&GroundTruth>,
    ) -> Result<RunResult> {
        let (decision, estimate, log_lr, ell) = if uses_multi_path(self.model) {
            let (d, e, ell) = decide_multi_at(self.model, self.weights, tracker, false)?;
            (d, e, None, ell)
        } else {
            let s = summarize(tracker.shared(), self.model, self.weights)?;
            let d = decide_binary(s.log_lr, &s.delta, self.weights);
            let ell = vec![s.posteriors[0].log_evidence, s.posteriors[1].log_evidence];
            (d, s.estimates[d.index].clone(), Some(s.log_lr), ell)
        };
        let realized = truth.map(|g| RealizedCost::of(g, decision.index, &estimate, self.weights));
        Ok(RunResult {
            stopping_time: t,
            decision,
            estimate,
            truncated,
            log_lr,
            log_likelihoods: ell,
            cost_trace: trace.to_vec(),
            extrapolated_lookups: extrapolated,
            realized,
        })
    }

    pub fn run(&self, source: &mut dyn DataSource, seed: u64) -> Result<RunResult> {
        let mut out = self.run_sweep(source, seed, &[self.config.alpha])?;
        Ok(out.pop().expect("one target"))
    }

    /// Runs one stream against several targets at once. Each target gets
    /// the result it would have had on its own, since `C_t` does not
    /// depend on the target.
    pub fn run_sweep(&self, source: &mut dyn DataSource, seed: u64, alphas: &[f64]) -> Result<Vec<RunResult>> {
        let mut results: Vec<Option<RunResult>> = vec![None; alphas.len()];
        let mut tracker = StatsTracker::new(self.model);
        let mut trace = Vec::new();
        let mut extrapolated = 0;
        let t_max = self.config.t_max;
        for t in 1..=t_max {
            let obs = source.next_observation(t).ok_or(SjdeError::DataExhausted { t: t - 1 })?;
            tracker.update(self.model, t, &obs)?;
            let c = self.cost_at(tracker.shared(), t, seed, &mut extrapolated)?;
            trace.push(c);
            let stop_now: Vec<usize> = (0..alphas.len())
                .filter(|&i| results[i].is_none() && (c.mean <= alphas[i] || t == t_max))
                .collect();
            if !stop_now.is_empty() {
                let truth = source.ground_truth();
                for i in stop_now {
                    let truncated = c.mean > alphas[i];
                    results[i] = Some(self.finish(&tracker, t, truncated, &trace, extrapolated, truth)?);
                }
            }
            if results.iter().all(Option::is_some) {
                break;
            }
        }
        Ok(results.into_iter().map(|r| r.expect("resolved by t_max")).collect())
    }
}

/// Runs the optimum scheme on one stream.
pub fn run_sjde(
    model: &LqgModel,
    weights: &CostWeights,
    config: &RunConfig,
    source: &mut dyn DataSource,
    seed: u64,
) -> Result<RunResult> {
    SjdeEngine::new(model, weights, config)?.run(source, seed)
}

/// Optimum decision and estimate after exactly `horizon` samples.
pub fn run_fixed_horizon(
    model: &LqgModel,
    weights: &CostWeights,
    horizon: usize,
    source: &mut dyn DataSource,
) -> Result<RunResult> {
    run_horizon(model, weights, horizon, source, false)
}

pub(crate) fn run_horizon(
    model: &LqgModel,
    weights: &CostWeights,
    horizon: usize,
    source: &mut dyn DataSource,
    weighted_ml: bool,
) -> Result<RunResult> {
    model.check_weights(weights)?;
    if horizon == 0 {
        return Err(SjdeError::InvalidConfig("horizon must be at least 1".into()));
    }
    let mut tracker = StatsTracker::new(model);
    for t in 1..=horizon {
        let obs = source.next_observation(t).ok_or(SjdeError::DataExhausted { t: t - 1 })?;
        tracker.update(model, t, &obs)?;
    }
    let (decision, estimate, log_lr, ell) = if uses_multi_path(model) || weighted_ml || !model.is_binary() {
        let (d, e, ell) = decide_multi_at(model, weights, &tracker, weighted_ml)?;
        let lr = model.is_binary().then(|| ell[1] - ell[0]);
        (d, e, lr, ell)
    } else {
        let s = summarize(tracker.shared(), model, weights)?;
        let d = decide_binary(s.log_lr, &s.delta, weights);
        let ell = vec![s.posteriors[0].log_evidence, s.posteriors[1].log_evidence];
        (d, s.estimates[d.index].clone(), Some(s.log_lr), ell)
    };
    let realized = source
        .ground_truth()
        .map(|g| RealizedCost::of(g, decision.index, &estimate, weights));
    Ok(RunResult {
        stopping_time: horizon,
        decision,
        estimate,
        truncated: false,
        log_lr,
        log_likelihoods: ell,
        cost_trace: Vec::new(),
        extrapolated_lookups: 0,
        realized,
    })
}

/// Aggregate of seeded trials whose ground truth cycles through the
/// hypotheses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub trials: usize,
    pub avg_stopping_time: f64,
    /// `None` with a single trial.
    pub stopping_time_stderr: Option<f64>,
    /// `Σ_i` mean realized cost of the trials under `H_i`.
    pub cost: f64,
    /// `None` unless every hypothesis has at least two trials.
    pub cost_stderr: Option<f64>,
    pub truncation_rate: f64,
}

/// Ground truth of trial `k` among `hypotheses`.
pub fn trial_truth(k: usize, hypotheses: usize) -> usize {
    k % hypotheses
}

pub fn summarize_trials(results: &[RunResult], hypotheses: usize) -> TrialSummary {
    let n = results.len();
    let times: Vec<f64> = results.iter().map(|r| r.stopping_time as f64).collect();
    let tm = SampleMoments::of(&times);
    let mut cost = 0.0;
    let mut var = 0.0;
    let mut stratified = true;
    for h in 0..hypotheses {
        let vals: Vec<f64> = results
            .iter()
            .filter_map(|r| r.realized.filter(|c| c.truth == h).map(|c| c.total()))
            .collect();
        let m = SampleMoments::of(&vals);
        if vals.is_empty() {
            stratified = false;
            continue;
        }
        cost += m.mean;
        if vals.len() < 2 {
            stratified = false;
        } else {
            var += m.variance / vals.len() as f64;
        }
    }
    let trunc = results.iter().filter(|r| r.truncated).count();
    TrialSummary {
        trials: n,
        avg_stopping_time: tm.mean,
        stopping_time_stderr: (n > 1).then(|| tm.std_error()),
        cost,
        cost_stderr: stratified.then(|| var.sqrt()),
        truncation_rate: trunc as f64 / n.max(1) as f64,
    }
}

//! Experiment runner behind the `sjde` binary.
//!
//! Every command takes an [`ExperimentConfig`] and writes CSV (or a grid
//! file) that depends only on the configuration and the seed.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sjde::baselines::{calibrate_sprt, run_ml_mmse, run_sprt_mmse, CalibrationOptions, SprtThresholds};
use sjde::config::ExperimentConfig;
use sjde::error::SjdeError;
use sjde::model::{RunConfig, StoppingSourceKind};
use sjde::scenarios;
use sjde::seed::derive_seed;
use sjde::stopping::schedule::first_crossing;
use sjde::stopping::{
    build_cost_grid, deterministic_cost_curve, simulate_error_curves, summarize_trials, trial_truth, CostEstimate,
    CostGrid, Detector, GridSpec, RunResult, SimulatedSource, SjdeEngine, TrialSummary,
};

/// Column order of every result table.
pub const CSV_HEADER: &str = "scheme,alpha,trials,avg_T,se_T,cost,se_cost,trunc_rate,seed";
pub const SCHEDULE_HEADER: &str = "t,cost,se_cost";

/// Failure of a command, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration, grid spec or flags.
    Config(String),
    /// The schedule target is not met by `t_max`.
    Unreachable(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Unreachable(_) => 3,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Unreachable(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SjdeError> for CliError {
    fn from(e: SjdeError) -> Self {
        match e {
            SjdeError::TargetUnreachable { .. } => CliError::Unreachable(e.to_string()),
            SjdeError::DataExhausted { .. } | SjdeError::SingularPrecision => CliError::Run(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reads a TOML file, or a built-in preset given as `preset:<name>`.
pub fn load_config(spec: &str) -> CliResult<ExperimentConfig> {
    let loaded = match spec.strip_prefix("preset:") {
        Some(name) => scenarios::preset(name),
        None => ExperimentConfig::load(Path::new(spec)),
    };
    loaded.map_err(|e| CliError::Config(format!("{spec}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scheme {
    Sjde,
    SprtMmse,
    MlMmse,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sjde => "sjde",
            Scheme::SprtMmse => "sprt-mmse",
            Scheme::MlMmse => "ml-mmse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub scheme: Scheme,
    /// Empty means the configuration's own sweep.
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub t_max: Option<usize>,
    pub mc_samples: Option<usize>,
    /// Cost grid for grid-lookup stopping.
    pub grid: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(scheme: Scheme, trials: usize, seed: u64) -> Self {
        Self {
            scheme,
            alphas: Vec::new(),
            trials,
            seed,
            t_max: None,
            mc_samples: None,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scheme: Scheme,
    pub alpha: f64,
    pub summary: TrialSummary,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{:.6},{},{:.6},{}",
                r.scheme.name(),
                r.alpha,
                s.trials,
                s.avg_stopping_time,
                opt(s.stopping_time_stderr),
                s.cost,
                opt(s.cost_stderr),
                s.truncation_rate,
                r.seed
            );
        }
        out
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Run(format!("writing {}: {e}", path.display())))
}

fn effective_run(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<RunConfig> {
    let mut run = cfg.run.clone();
    run.master_seed = opts.seed;
    if let Some(t) = opts.t_max {
        run.t_max = t;
    }
    if let Some(m) = opts.mc_samples {
        run.mc_samples = m;
    }
    if opts.grid.is_some() {
        run.stopping_source = StoppingSourceKind::GridLookup;
    }
    run.validate()?;
    Ok(run)
}

fn simulate<T, F>(cfg: &ExperimentConfig, trials: usize, seed: u64, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(&mut SimulatedSource<'_>, usize) -> sjde::error::Result<T> + Sync,
{
    let k = cfg.model.hypothesis_count();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut src = SimulatedSource::new(&cfg.model, trial_truth(i, k), derive_seed(seed, "trial", i as u64))?;
            f(&mut src, i)
        })
        .collect::<sjde::error::Result<Vec<_>>>()
        .map_err(CliError::from)
}

fn warn_unreachable(scheme: Scheme, alpha: f64, s: &TrialSummary) {
    if s.truncation_rate >= 1.0 {
        eprintln!("warning: {} never reached alpha = {alpha}; every trial was truncated", scheme.name());
    }
}

/// Runs `trials` seeded replicates of one scheme at every target.
///
/// Trial `k` is simulated under hypothesis `k mod K` from the stream keyed
/// by `(seed, k)`, so different schemes see the same data.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<ExperimentReport> {
    let alphas = if opts.alphas.is_empty() { cfg.alphas() } else { opts.alphas.clone() };
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(CliError::Config("alphas must be a nonempty list of positive numbers".into()));
    }
    if opts.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let run = effective_run(cfg, opts)?;
    let k = cfg.model.hypothesis_count();
    let (model, weights) = (&cfg.model, &cfg.weights);

    let per_alpha: Vec<(Vec<RunResult>, Option<Vec<bool>>)> = match opts.scheme {
        Scheme::Sjde => {
            let grid = match &opts.grid {
                Some(p) => Some(CostGrid::load(p, model, weights).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let mut engine = SjdeEngine::new(model, weights, &run)?;
            if let Some(g) = &grid {
                engine = engine.with_grid(g)?;
            }
            let sweeps = simulate(cfg, opts.trials, opts.seed, |src, i| {
                engine.run_sweep(src, derive_seed(opts.seed, "engine", i as u64), &alphas)
            })?;
            let mut out: Vec<Vec<RunResult>> = vec![Vec::with_capacity(opts.trials); alphas.len()];
            for sweep in sweeps {
                for (j, r) in sweep.into_iter().enumerate() {
                    out[j].push(r);
                }
            }
            out.into_iter().map(|v| (v, None)).collect()
        }
        Scheme::SprtMmse => {
            let copts = CalibrationOptions {
                trials: opts.trials.max(2),
                t_max: run.t_max,
                ..CalibrationOptions::default()
            };
            let mut out = Vec::with_capacity(alphas.len());
            for &alpha in &alphas {
                let thresholds = match calibrate_sprt(model, weights, alpha, &copts, derive_seed(opts.seed, "calibration", 0)) {
                    Ok(c) => c.thresholds,
                    Err(SjdeError::TargetUnreachable { .. }) => {
                        eprintln!("warning: SPRT calibration missed alpha = {alpha}; using the widest thresholds");
                        SprtThresholds::symmetric(copts.max_scale)?
                    }
                    Err(e) => return Err(e.into()),
                };
                out.push((
                    simulate(cfg, opts.trials, opts.seed, |src, _| run_sprt_mmse(model, weights, thresholds, src, run.t_max))?,
                    None,
                ));
            }
            out
        }
        Scheme::MlMmse => {
            let curve = simulate_error_curves(model, weights, run.t_max, run.mc_samples, derive_seed(opts.seed, "ml-schedule", 0))?
                .cost_curve(weights, Detector::WeightedMl);
            let mut out = Vec::with_capacity(alphas.len());
            for &alpha in &alphas {
                let (horizon, reached) = match first_crossing(&curve, alpha) {
                    Some(t) => (t, true),
                    None => (run.t_max, false),
                };
                let results = simulate(cfg, opts.trials, opts.seed, |src, _| run_ml_mmse(model, weights, horizon, src))?;
                out.push((results, Some(vec![!reached; opts.trials])));
            }
            out
        }
    };

    let rows = alphas
        .iter()
        .zip(per_alpha)
        .map(|(&alpha, (mut results, truncated))| {
            if let Some(t) = truncated {
                results.iter_mut().zip(t).for_each(|(r, t)| r.truncated = t);
            }
            let summary = summarize_trials(&results, k);
            warn_unreachable(opts.scheme, alpha, &summary);
            ReportRow {
                scheme: opts.scheme,
                alpha,
                summary,
                seed: opts.seed,
            }
        })
        .collect();
    Ok(ExperimentReport { rows })
}

pub fn write_report(report: &ExperimentReport, out: Option<&Path>) -> CliResult<()> {
    let csv = report.to_csv();
    match out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// Builds the cost grid of a binary configuration and writes it.
pub fn cmd_grid(
    cfg: &ExperimentConfig,
    spec: Option<&GridSpec>,
    mc_samples: Option<usize>,
    seed: u64,
    out: &Path,
) -> CliResult<CostGrid> {
    let spec = spec
        .or(cfg.grid.as_ref())
        .ok_or_else(|| CliError::Config("no grid specification in the configuration".into()))?;
    let mc = mc_samples.unwrap_or(cfg.run.mc_samples);
    let start = Instant::now();
    let grid = build_cost_grid(spec, &cfg.model, &cfg.weights, mc, seed)?;
    grid.save(out).map_err(|e| CliError::Run(format!("writing {}: {e}", out.display())))?;
    eprintln!(
        "wrote {} grid points to {} in {:.2} s",
        grid.len(),
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(grid)
}

pub fn schedule_csv(curve: &[CostEstimate]) -> String {
    let mut out = String::from(SCHEDULE_HEADER);
    out.push('\n');
    for (i, c) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{:.6},{:.6}", i + 1, c.mean, c.std_error);
    }
    out
}

/// Deterministic stopping time of a fixed-matrix configuration. The cost
/// curve is written even when `α` is not reached.
pub fn cmd_schedule(
    cfg: &ExperimentConfig,
    alpha: Option<f64>,
    t_max: Option<usize>,
    mc_samples: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<usize> {
    let alpha = alpha.unwrap_or(cfg.run.alpha);
    let t_max = t_max.unwrap_or(cfg.run.t_max);
    let mc = mc_samples.unwrap_or(cfg.run.mc_samples);
    if !(alpha > 0.0) || t_max == 0 || mc == 0 {
        return Err(CliError::Config("alpha, t_max and mc_samples must be positive".into()));
    }
    let curve = deterministic_cost_curve(&cfg.model, &cfg.weights, t_max, mc, derive_seed(seed, "schedule", 0))?;
    let csv = schedule_csv(&curve);
    match out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    match first_crossing(&curve, alpha) {
        Some(t) => {
            eprintln!("T = {t}");
            Ok(t)
        }
        None => Err(CliError::Unreachable(
            SjdeError::TargetUnreachable { alpha, t_max }.to_string(),
        )),
    }
}

/// Writes a preset as an editable configuration file.
pub fn cmd_preset(name: &str, out: Option<&Path>) -> CliResult<String> {
    let cfg = scenarios::preset(name)?;
    let text = cfg.to_toml();
    match out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sjde::stopping::TrialSummary;

    #[test]
    fn single_trial_leaves_stderr_empty() {
        let report = ExperimentReport {
            rows: vec![ReportRow {
                scheme: Scheme::Sjde,
                alpha: 0.25,
                summary: TrialSummary {
                    trials: 1,
                    avg_stopping_time: 4.0,
                    stopping_time_stderr: None,
                    cost: 0.5,
                    cost_stderr: None,
                    truncation_rate: 0.0,
                },
                seed: 9,
            }],
        };
        assert_eq!(
            report.to_csv(),
            format!("{CSV_HEADER}\nsjde,0.25,1,4.000000,,0.500000,,0.000000,9\n")
        );
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(CliError::from(SjdeError::Parse("x".into())).exit_code(), 2);
        assert_eq!(
            CliError::from(SjdeError::TargetUnreachable { alpha: 0.1, t_max: 3 }).exit_code(),
            3
        );
        assert_eq!(load_config("preset:unknown").unwrap_err().exit_code(), 2);
        assert_eq!(load_config("/nonexistent/file.toml").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn presets_load_by_name() {
        for name in scenarios::PRESETS {
            assert_eq!(load_config(&format!("preset:{name}")).unwrap().name, name);
        }
    }
}

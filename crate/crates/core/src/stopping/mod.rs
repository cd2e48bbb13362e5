//! Optimal stopping: the cost `C_t`, its offline approximations and the
//! sequential loop.

pub mod cost;
pub mod grid;
pub mod run;
pub mod schedule;

pub use cost::{estimate_cost_with, estimate_optimal_cost, CostEstimate};
pub use grid::{build_cost_grid, AxisSpec, CostGrid, GridCoordinates, GridLookup, GridSpec};
pub use run::{
    run_fixed_horizon, run_sjde, summarize_trials, trial_truth, DataSource, GroundTruth, Observation, RealizedCost, ReplaySource,
    RunResult, SimulatedSource, SjdeEngine, TrialSummary,
};
pub use schedule::{
    compute_deterministic_schedule, deterministic_cost_curve, estimate_error_probs, mmse_schedule,
    simulate_error_curves, Detector, ErrorCurves, Schedule, ScheduleError,
};

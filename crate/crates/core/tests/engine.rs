use nalgebra::{DMatrix, DVector};
use sjde::baselines::{run_sprt_mmse, SprtThresholds};
use sjde::error::SjdeError;
use sjde::model::{make_cost_weights, CostWeights, RunConfig, StoppingSourceKind};
use sjde::scenarios::{cognitive_radio_config, lqg_demo_config, smart_grid_ieee4_config, CognitiveRadioScenario};
use sjde::stopping::schedule::first_crossing;
use sjde::stopping::{
    build_cost_grid, compute_deterministic_schedule, simulate_error_curves, CostGrid, Detector, Observation,
    ReplaySource, SimulatedSource, SjdeEngine,
};

#[test]
fn replayed_stream_reproduces_simulated_run() {
    let cfg = lqg_demo_config().unwrap();
    let run = RunConfig::new(0.3, 500).unwrap();
    let engine = SjdeEngine::new(&cfg.model, &cfg.weights, &run).unwrap();
    let mut sim = SimulatedSource::new(&cfg.model, 1, 77).unwrap();
    let first = engine.run(&mut sim, 3).unwrap();

    let mut sim = SimulatedSource::new(&cfg.model, 1, 77).unwrap();
    let truth = sjde::stopping::DataSource::ground_truth(&sim).unwrap().clone();
    let items: Vec<Observation> = (1..=first.stopping_time)
        .map(|t| sjde::stopping::DataSource::next_observation(&mut sim, t).unwrap())
        .collect();
    let mut replay = ReplaySource::new(items).with_truth(truth);
    let second = engine.run(&mut replay, 3).unwrap();
    assert_eq!(first, second);
}

#[test]
fn exhausted_replay_is_reported() {
    let cfg = lqg_demo_config().unwrap();
    let run = RunConfig::new(0.01, 200).unwrap();
    let engine = SjdeEngine::new(&cfg.model, &cfg.weights, &run).unwrap();
    let obs = Observation {
        h: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        y: DVector::from_element(1, 0.2),
    };
    let err = engine.run(&mut ReplaySource::new(vec![obs]), 1).unwrap_err();
    assert_eq!(err, SjdeError::DataExhausted { t: 1 });
}

#[test]
fn grid_file_round_trip_and_hash_guard() {
    let cfg = cognitive_radio_config(&CognitiveRadioScenario::default()).unwrap();
    let grid = build_cost_grid(cfg.grid.as_ref().unwrap(), &cfg.model, &cfg.weights, 200, 9).unwrap();
    assert_eq!(grid.len(), 400);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.json");
    grid.save(&path).unwrap();
    assert_eq!(CostGrid::load(&path, &cfg.model, &cfg.weights).unwrap(), grid);

    let other = CostWeights::separated(vec![0.5, 0.5], &[0.0, 0.7]).unwrap();
    assert!(matches!(
        CostGrid::load(&path, &cfg.model, &other),
        Err(SjdeError::ModelHashMismatch { .. })
    ));
}

#[test]
fn grid_lookup_engine_runs_on_the_grid_only() {
    let cfg = cognitive_radio_config(&CognitiveRadioScenario::default()).unwrap();
    let grid = build_cost_grid(cfg.grid.as_ref().unwrap(), &cfg.model, &cfg.weights, 200, 9).unwrap();
    let mut run = cfg.run.clone();
    run.stopping_source = StoppingSourceKind::GridLookup;
    let engine = SjdeEngine::new(&cfg.model, &cfg.weights, &run).unwrap();
    let mut src = SimulatedSource::new(&cfg.model, 0, 1).unwrap();
    assert!(engine.run(&mut src, 1).is_err());
    let engine = engine.with_grid(&grid).unwrap();
    let mut src = SimulatedSource::new(&cfg.model, 0, 1).unwrap();
    let r = engine.run(&mut src, 1).unwrap();
    assert!(r.stopping_time >= 1 && r.stopping_time <= run.t_max);
    if r.decision.index == 0 {
        assert!(r.estimate.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn ieee4_schedule_basics() {
    let cfg = smart_grid_ieee4_config().unwrap();
    let s = compute_deterministic_schedule(&cfg.model, &cfg.weights, 5.0, 5, 500, 1).unwrap();
    assert_eq!(s.stopping_time, 1);
    let s = compute_deterministic_schedule(&cfg.model, &cfg.weights, 0.6, 40, 2000, 1).unwrap();
    assert!(s.curve[s.stopping_time - 1].mean <= 0.6);
    assert!(s.curve[..s.stopping_time - 1].iter().all(|c| c.mean > 0.6));
}

#[test]
fn zero_estimation_weights_give_weighted_error_sum() {
    let cfg = smart_grid_ieee4_config().unwrap();
    let w = make_cost_weights(vec![0.2; 5], DMatrix::zeros(5, 5)).unwrap();
    let curves = simulate_error_curves(&cfg.model, &w, 6, 400, 3).unwrap();
    for t in 1..=6 {
        let sum: f64 = curves.error_probs(t, Detector::Sjde).iter().map(|p| 0.2 * p).sum();
        assert!((curves.cost(t, &w, Detector::Sjde).mean - sum).abs() < 1e-15);
    }
}

#[test]
fn ieee4_sjde_schedule_is_never_longer_than_ml() {
    let cfg = smart_grid_ieee4_config().unwrap();
    let curves = simulate_error_curves(&cfg.model, &cfg.weights, 30, 4000, 4).unwrap();
    let sjde = curves.cost_curve(&cfg.weights, Detector::Sjde);
    let ml = curves.cost_curve(&cfg.weights, Detector::WeightedMl);
    for alpha in [0.9, 0.7, 0.5] {
        let (ts, tm) = (first_crossing(&sjde, alpha).unwrap(), first_crossing(&ml, alpha).unwrap());
        assert!(ts <= tm, "alpha {alpha}: {ts} vs {tm}");
    }
}

#[test]
fn tiny_sprt_thresholds_stop_immediately() {
    let cfg = lqg_demo_config().unwrap();
    let th = SprtThresholds::symmetric(1e-9).unwrap();
    let mut src = SimulatedSource::new(&cfg.model, 0, 5).unwrap();
    let r = run_sprt_mmse(&cfg.model, &cfg.weights, th, &mut src, 50).unwrap();
    assert_eq!(r.stopping_time, 1);
    assert!(!r.truncated);
}

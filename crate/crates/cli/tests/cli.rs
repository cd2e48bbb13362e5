use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rayon::prelude::*;
use sjde::seed::derive_seed;
use sjde::stopping::{trial_truth, CostGrid, SimulatedSource, SjdeEngine};
use sjde::model::StoppingSourceKind;
use sjde_cli::{cmd_grid, load_config, CSV_HEADER};

fn sjde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sjde")).args(args).output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let p = dir.path().join(format!("run{i}.csv"));
            let o = sjde(&[
                "run", "--config", "preset:lqg-demo", "--trials", "200", "--seed", "4", "--mc-samples", "300", "--out",
                p.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(p).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn stopping_time_falls_as_the_target_loosens() {
    let o = sjde(&["run", "--config", "preset:lqg-demo", "--alpha", "0.2,0.3,0.4,0.5", "--trials", "2000", "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    let t = column(&csv, "avg_T");
    assert_eq!(t.len(), 4);
    assert!(t.windows(2).all(|w| w[1] < w[0]), "{t:?}");
    let (cost, se, alpha) = (column(&csv, "cost"), column(&csv, "se_cost"), column(&csv, "alpha"));
    for i in 0..4 {
        assert!(cost[i] <= alpha[i] + 3.0 * se[i]);
    }
}

#[test]
fn single_trial_rows_leave_standard_errors_empty() {
    let o = sjde(&["run", "--config", "preset:lqg-demo", "--alpha", "0.3", "--trials", "1", "--mc-samples", "200"]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "1");
    assert_eq!(row[4], "");
    assert_eq!(row[6], "");
}

#[test]
fn grid_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let p = dir.path().join(format!("g{i}.json"));
            let o = sjde(&["grid", "--config", "preset:cognitive-radio", "--mc-samples", "200", "--seed", "3", "--out", p.to_str().unwrap()]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(p).unwrap()
        })
        .collect();
    assert_eq!(files[0], files[1]);
}

#[test]
fn exit_codes() {
    assert_eq!(sjde(&["run", "--config", "/does/not/exist.toml"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = 3\n").unwrap();
    assert_eq!(sjde(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let out = dir.path().join("g.json");
    let o = sjde(&["grid", "--config", "preset:cognitive-radio", "--grid", "{\"coords\": 1}", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let curve = dir.path().join("curve.csv");
    let o = sjde(&[
        "schedule", "--config", "preset:smart-grid-ieee4", "--alpha", "0.01", "--t-max", "4", "--mc-samples", "500",
        "--out", curve.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fs::read_to_string(curve).unwrap().lines().count(), 5);
}

#[test]
fn loose_schedule_target_stops_after_one_sample() {
    let o = sjde(&["schedule", "--config", "preset:smart-grid-ieee4", "--alpha", "5", "--t-max", "3", "--mc-samples", "500"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("T = 1"));
}

#[test]
fn exported_preset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cr.toml");
    assert!(sjde(&["preset", "cognitive-radio", "--out", p.to_str().unwrap()]).status.success());
    assert_eq!(load_config(p.to_str().unwrap()).unwrap(), load_config("preset:cognitive-radio").unwrap());
}

#[test]
fn grid_lookup_decisions_match_online_decisions() {
    let cfg = load_config("preset:cognitive-radio").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.json");
    cmd_grid(&cfg, None, Some(2000), 8, &path).unwrap();
    let grid = CostGrid::load(Path::new(&path), &cfg.model, &cfg.weights).unwrap();

    let online = SjdeEngine::new(&cfg.model, &cfg.weights, &cfg.run).unwrap();
    let mut lookup_cfg = cfg.run.clone();
    lookup_cfg.stopping_source = StoppingSourceKind::GridLookup;
    let lookup = SjdeEngine::new(&cfg.model, &cfg.weights, &lookup_cfg).unwrap().with_grid(&grid).unwrap();

    let paths = 1000;
    let agree: usize = (0..paths as u64)
        .into_par_iter()
        .map(|k| {
            let truth = trial_truth(k as usize, 2);
            let seed = derive_seed(6, "trial", k);
            let a = online.run(&mut SimulatedSource::new(&cfg.model, truth, seed).unwrap(), k).unwrap();
            let b = lookup.run(&mut SimulatedSource::new(&cfg.model, truth, seed).unwrap(), k).unwrap();
            usize::from(a.decision.index == b.decision.index)
        })
        .sum();
    assert!(agree as f64 >= 0.95 * paths as f64, "{agree} of {paths}");
}

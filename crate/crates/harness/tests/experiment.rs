use std::path::Path;

use pmbtbd_harness::experiment::{compare_modes, run_experiment, RunOptions, RUNS_HEADER};
use pmbtbd_harness::ExperimentConfig;

fn small(name: &str, runs: usize, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(name).unwrap();
    cfg.num_runs = runs;
    cfg.output_dir = out.to_path_buf();
    cfg.filter.particles_per_bernoulli = 300;
    cfg.filter.phd_capacity = 3000;
    cfg.filter.birth_particles = 3000;
    cfg
}

fn single_object(runs: usize, out: &Path) -> ExperimentConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/single-object.toml");
    let mut cfg = ExperimentConfig::load(path).unwrap();
    cfg.num_runs = runs;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn repeated_runs_write_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = RunOptions { threads: Some(3), snapshot: false, estimates: true };
    run_experiment(&small("desk-s1", 2, a.path()), &opts).unwrap();
    run_experiment(&small("desk-s1", 2, b.path()), &opts).unwrap();
    for f in ["runs.csv", "aggregate.csv", "estimates.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&small("desk-s2", 3, a.path()), &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
    run_experiment(&small("desk-s2", 3, b.path()), &RunOptions { threads: Some(4), ..Default::default() }).unwrap();
    assert_eq!(std::fs::read(a.path().join("runs.csv")).unwrap(), std::fs::read(b.path().join("runs.csv")).unwrap());
}

#[test]
fn aggregate_is_the_column_mean_of_runs() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small("desk-s1", 3, dir.path()), &RunOptions::default()).unwrap();
    let (rh, runs) = parse_csv(&std::fs::read_to_string(dir.path().join("runs.csv")).unwrap());
    let (ah, agg) = parse_csv(&std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap());
    assert_eq!(rh.join(","), RUNS_HEADER);
    assert_eq!(agg.len(), 80);
    for row in &agg {
        let k = row[0];
        let at_k: Vec<&Vec<f64>> = runs.iter().filter(|r| r[1] == k).collect();
        assert_eq!(at_k.len(), 3);
        for (c, name) in ah.iter().enumerate().skip(1) {
            let rc = rh.iter().position(|h| h == name).unwrap();
            let mean = at_k.iter().map(|r| r[rc]).sum::<f64>() / 3.0;
            assert!((mean - row[c]).abs() < 1e-12, "k={k} {name}");
        }
    }
}

#[test]
fn manifest_records_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("desk-s2", 1, dir.path());
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], cfg.seed);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_s"].as_f64().unwrap() > 0.0);
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.iter().all(|n| !n.to_string_lossy().contains(".tmp")), "{names:?}");
}

#[test]
fn modes_agree_on_an_isolated_object() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = single_object(12, dir.path());
    cfg.interaction_window = Some([10, 40]);
    let s = compare_modes(&cfg, &RunOptions::default()).unwrap().summary;
    let t = s.total_test;
    assert!(t.mean.abs() < 3.0 * t.std_err + 0.05, "{t:?}");
    assert!(dir.path().join("comparison.csv").is_file());
    assert!(dir.path().join("pmbf-a/runs.csv").is_file());
}

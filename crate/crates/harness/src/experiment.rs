//! Monte-Carlo runs, result files and paired mode comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pmbtbd::filter::{FilterConfig, PmbFilter};
use pmbtbd::gospa::{gospa, GospaConfig, GospaResult};
use pmbtbd::rng::{derive_seed, substream};
use pmbtbd::scenario::{generate_truth, render_frame, Scenario};
use pmbtbd::state::GroundTruthFrame;
use pmbtbd::update::{EstimateSet, FilterMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::write_atomic;

/// Metrics of one filter step in one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub run: usize,
    pub k: u64,
    pub gospa: GospaResult,
    pub est_count: usize,
    pub truth_count: usize,
    pub phd_mass: f64,
    pub bernoulli_count: usize,
    pub bp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub estimates: Vec<EstimateSet>,
    /// Per step: `(label, r, mean state)` of every Bernoulli and the PHD mass.
    pub snapshots: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub snapshot: bool,
    pub estimates: bool,
}

/// Seed of the frames seen by run `run`; shared by both modes.
pub fn frame_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[run as u64, 1])
}

/// Seed of the filter's own randomness in run `run`; shared by both modes.
pub fn filter_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[run as u64, 2])
}

/// Runs the filter once over freshly rendered frames.
pub fn simulate_run(
    fcfg: &FilterConfig,
    scenario: &Scenario,
    truth: &[GroundTruthFrame],
    gcfg: &GospaConfig,
    master_seed: u64,
    run: usize,
    snapshot: bool,
) -> Result<RunOutput> {
    let fseed = frame_seed(master_seed, run);
    let mut filter = PmbFilter::new(*fcfg, filter_seed(master_seed, run))?;
    let mut out = RunOutput { records: Vec::with_capacity(truth.len()), estimates: Vec::new(), snapshots: Vec::new() };
    for t in truth {
        let frame = render_frame(t, &scenario.grid, scenario.sigma_n, &mut substream(fseed, &[t.k]));
        let report = filter.step(&frame)?;
        let g = gospa(&t.positions(), &report.estimates.positions(), gcfg)?;
        out.records.push(StepRecord {
            run,
            k: t.k,
            gospa: g,
            est_count: report.estimates.len(),
            truth_count: t.objects.len(),
            phd_mass: report.phd_mass,
            bernoulli_count: report.bernoulli_count,
            bp_iterations: report.bp_iterations,
        });
        if snapshot {
            let mut s = String::new();
            for b in filter.posterior().bernoullis() {
                let m = b.spatial().mean_state().expect("nonempty particle set");
                writeln!(s, "{},{},{},{},{},{},{},{},", t.k, b.label(), b.r(), m.px, m.py, m.vx, m.vy, m.gamma)
                    .unwrap();
            }
            writeln!(s, "{},phd,,,,,,,{}", t.k, report.phd_mass).unwrap();
            out.snapshots.push(s);
        }
        out.estimates.push(report.estimates);
    }
    Ok(out)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| HarnessError::Config { path: "threads".into(), msg: e.to_string() })
}

/// All runs of one mode, in run order.
pub fn run_monte_carlo(cfg: &ExperimentConfig, mode: FilterMode, opts: &RunOptions) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let truth = generate_truth(&scenario)?;
    let mut fcfg = cfg.filter_config(&scenario);
    fcfg.mode = mode;
    pool(opts.threads)?.install(|| {
        (0..cfg.num_runs)
            .into_par_iter()
            .map(|run| simulate_run(&fcfg, &scenario, &truth, &cfg.gospa, cfg.seed, run, opts.snapshot && run == 0))
            .collect()
    })
}

pub const RUNS_HEADER: &str =
    "run,k,total,loc,missed,false,est_count,truth_count,phd_mass,bernoulli_count,bp_iterations";

pub fn runs_csv(runs: &[RunOutput]) -> String {
    let mut s = String::from(RUNS_HEADER);
    s.push('\n');
    for r in runs.iter().flat_map(|o| &o.records) {
        let g = &r.gospa;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.k,
            g.total,
            g.localization,
            g.missed,
            g.false_,
            r.est_count,
            r.truth_count,
            r.phd_mass,
            r.bernoulli_count,
            r.bp_iterations
        )
        .unwrap();
    }
    s
}

/// Per-step means over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRow {
    pub k: u64,
    pub total: f64,
    pub loc: f64,
    pub missed: f64,
    pub false_: f64,
    pub est_count: f64,
    pub truth_count: f64,
    pub phd_mass: f64,
    pub bernoulli_count: f64,
    pub bp_iterations: f64,
}

pub fn aggregate(runs: &[RunOutput]) -> Vec<AggregateRow> {
    let steps = runs.first().map_or(0, |r| r.records.len());
    let n = runs.len() as f64;
    (0..steps)
        .map(|i| {
            let mean = |f: &dyn Fn(&StepRecord) -> f64| runs.iter().map(|r| f(&r.records[i])).sum::<f64>() / n;
            AggregateRow {
                k: runs[0].records[i].k,
                total: mean(&|r| r.gospa.total),
                loc: mean(&|r| r.gospa.localization),
                missed: mean(&|r| r.gospa.missed),
                false_: mean(&|r| r.gospa.false_),
                est_count: mean(&|r| r.est_count as f64),
                truth_count: mean(&|r| r.truth_count as f64),
                phd_mass: mean(&|r| r.phd_mass),
                bernoulli_count: mean(&|r| r.bernoulli_count as f64),
                bp_iterations: mean(&|r| r.bp_iterations as f64),
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("k,total,loc,missed,false,est_count,truth_count,phd_mass,bernoulli_count,bp_iterations\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.total,
            r.loc,
            r.missed,
            r.false_,
            r.est_count,
            r.truth_count,
            r.phd_mass,
            r.bernoulli_count,
            r.bp_iterations
        )
        .unwrap();
    }
    s
}

pub fn estimates_csv(runs: &[RunOutput]) -> String {
    let mut s = String::from("run,k,label,r,px,py,vx,vy,gamma\n");
    for (run, o) in runs.iter().enumerate() {
        for (rec, est) in o.records.iter().zip(&o.estimates) {
            for e in &est.estimates {
                let x = e.state;
                writeln!(s, "{},{},{},{},{},{},{},{},{}", run, rec.k, e.label, e.r, x.px, x.py, x.vx, x.vy, x.gamma)
                    .unwrap();
            }
        }
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub mode: String,
    pub config_sha256: String,
    pub seed: u64,
    pub num_runs: usize,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub version: String,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub runs: Vec<RunOutput>,
    pub aggregate: Vec<AggregateRow>,
}

fn write_mode_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    mode: FilterMode,
    runs: &[RunOutput],
    opts: &RunOptions,
    started: Instant,
) -> Result<Vec<AggregateRow>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let agg = aggregate(runs);
    let mut files = vec!["runs.csv".to_string(), "aggregate.csv".to_string()];
    write_atomic(&dir.join("runs.csv"), runs_csv(runs).as_bytes())?;
    write_atomic(&dir.join("aggregate.csv"), aggregate_csv(&agg).as_bytes())?;
    if opts.estimates {
        write_atomic(&dir.join("estimates.csv"), estimates_csv(runs).as_bytes())?;
        files.push("estimates.csv".into());
    }
    if opts.snapshot {
        let mut s = String::from("k,label,r,px,py,vx,vy,gamma,phd_mass\n");
        runs[0].snapshots.iter().for_each(|x| s.push_str(x));
        write_atomic(&dir.join("snapshot.csv"), s.as_bytes())?;
        files.push("snapshot.csv".into());
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        mode: mode.to_string(),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        num_runs: cfg.num_runs,
        threads: opts.threads,
        wall_time_s: started.elapsed().as_secs_f64(),
        files,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    Ok(agg)
}

/// Runs the configured mode and writes `runs.csv`, `aggregate.csv` and
/// `manifest.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    let started = Instant::now();
    let runs = run_monte_carlo(cfg, cfg.mode, opts)?;
    let aggregate = write_mode_outputs(&cfg.output_dir, cfg, cfg.mode, &runs, opts, started)?;
    Ok(ExperimentOutput { dir: cfg.output_dir.clone(), runs, aggregate })
}

/// One-sided paired t-test of `H1: mean(d) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_test(d: &[f64]) -> PairedTest {
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let std_err = (var / n as f64).sqrt();
    let (t, p_value) = if std_err > 0.0 && n > 1 {
        let t = mean / std_err;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
        (t, 1.0 - dist.cdf(t))
    } else if mean > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 }, 1.0)
    };
    PairedTest { n, mean, std_err, t, p_value }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub window: [u64; 2],
    pub interaction_step: u64,
    pub mean_total_ac: f64,
    pub mean_total_a: f64,
    /// Per run: window-averaged total GOSPA of PMBF-A minus PMBF-AC.
    pub total_test: PairedTest,
    pub missed_ac_at_step: f64,
    pub missed_a_at_step: f64,
    /// Per run: missed error of PMBF-A minus PMBF-AC at the interaction step.
    pub missed_test: PairedTest,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub ac: Vec<RunOutput>,
    pub a: Vec<RunOutput>,
    pub summary: ComparisonSummary,
}

fn window_mean(r: &RunOutput, w: [u64; 2]) -> f64 {
    let v: Vec<f64> = r.records.iter().filter(|x| x.k >= w[0] && x.k <= w[1]).map(|x| x.gospa.total).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn at_step(r: &RunOutput, k: u64) -> &StepRecord {
    r.records.iter().find(|x| x.k == k).expect("step inside scenario")
}

/// Summary statistics of paired runs of both modes.
pub fn summarize(ac: &[RunOutput], a: &[RunOutput], window: [u64; 2], step: u64) -> ComparisonSummary {
    let d_total: Vec<f64> = a.iter().zip(ac).map(|(x, y)| window_mean(x, window) - window_mean(y, window)).collect();
    let d_missed: Vec<f64> =
        a.iter().zip(ac).map(|(x, y)| at_step(x, step).gospa.missed - at_step(y, step).gospa.missed).collect();
    let n = ac.len() as f64;
    ComparisonSummary {
        window,
        interaction_step: step,
        mean_total_ac: ac.iter().map(|r| window_mean(r, window)).sum::<f64>() / n,
        mean_total_a: a.iter().map(|r| window_mean(r, window)).sum::<f64>() / n,
        total_test: paired_test(&d_total),
        missed_ac_at_step: ac.iter().map(|r| at_step(r, step).gospa.missed).sum::<f64>() / n,
        missed_a_at_step: a.iter().map(|r| at_step(r, step).gospa.missed).sum::<f64>() / n,
        missed_test: paired_test(&d_missed),
    }
}

/// Runs both modes on identical frames and filter seeds. Writes each mode's
/// files into a subdirectory, `comparison.csv` with per-step paired
/// differences (A − AC), and `summary.json`.
pub fn compare_modes(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Comparison> {
    let scenario = cfg.scenario()?;
    let window = cfg.interaction_window.unwrap_or([1, scenario.num_steps]);
    let step = cfg.interaction_step.unwrap_or((window[0] + window[1]) / 2);
    let started = Instant::now();
    let ac = run_monte_carlo(cfg, FilterMode::Ac, opts)?;
    let agg_ac = write_mode_outputs(&cfg.output_dir.join("pmbf-ac"), cfg, FilterMode::Ac, &ac, opts, started)?;
    let started = Instant::now();
    let a = run_monte_carlo(cfg, FilterMode::A, opts)?;
    let agg_a = write_mode_outputs(&cfg.output_dir.join("pmbf-a"), cfg, FilterMode::A, &a, opts, started)?;

    let mut csv = String::from("k,total_ac,total_a,diff_total,diff_total_se,missed_ac,missed_a,diff_missed\n");
    for (i, (x, y)) in agg_ac.iter().zip(&agg_a).enumerate() {
        let d: Vec<f64> =
            a.iter().zip(&ac).map(|(ra, rc)| ra.records[i].gospa.total - rc.records[i].gospa.total).collect();
        let t = paired_test(&d);
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            x.k,
            x.total,
            y.total,
            t.mean,
            t.std_err,
            x.missed,
            y.missed,
            y.missed - x.missed
        )
        .unwrap();
    }
    write_atomic(&cfg.output_dir.join("comparison.csv"), csv.as_bytes())?;
    let summary = summarize(&ac, &a, window, step);
    write_atomic(&cfg.output_dir.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    Ok(Comparison { ac, a, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_test_values() {
        // d = (1, 2, 3): mean 2, sd 1, se 1/√3, t = 2√3 on 2 dof.
        let t = paired_test(&[1.0, 2.0, 3.0]);
        assert!((t.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // One-sided p for t on 2 dof: 0.5 − t / (2 sqrt(t² + 2)).
        let expected = 0.5 - t.t / (2.0 * (t.t * t.t + 2.0).sqrt());
        assert!((t.p_value - expected).abs() < 1e-10);
        assert_eq!(paired_test(&[0.5, 0.5]).p_value, 0.0);
        assert_eq!(paired_test(&[0.0, 0.0]).p_value, 1.0);
    }
}

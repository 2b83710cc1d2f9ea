use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmbtbd::gospa::{gospa, GospaConfig};
use pmbtbd::scenario::{generate_truth, render_all};
use pmbtbd::update::FilterMode;
use pmbtbd_harness::experiment::{compare_modes, run_experiment, RunOptions};
use pmbtbd_harness::io::{read_points, write_frames};
use pmbtbd_harness::{ExperimentConfig, Result, ScenarioFile};

/// Particle PMB track-before-detect experiments.
#[derive(Parser)]
#[command(name = "pmbtbd", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte-Carlo runs of one filter mode.
    Run(RunArgs),
    /// Paired runs of both modes on common frames and seeds.
    Compare(RunArgs),
    /// Writes truth and frame CSVs for a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step GOSPA between two point files.
    Gospa {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Run to select when the estimate file has a `run` column.
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long, default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or a preset name (desk-s1, desk-s2, paper-s1, paper-s2).
    #[arg(long)]
    config: String,
    #[arg(long)]
    mode: Option<FilterMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "PMBTBD_THREADS")]
    threads: Option<usize>,
    /// Also write a per-step posterior snapshot of run 0.
    #[arg(long)]
    snapshot: bool,
    /// Also write declared estimates of every run.
    #[arg(long)]
    estimates: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, RunOptions)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.runs {
            cfg.num_runs = n;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok((cfg, RunOptions { threads: self.threads, snapshot: self.snapshot, estimates: self.estimates }))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(args) => {
            let (cfg, opts) = args.resolve()?;
            let out = run_experiment(&cfg, &opts)?;
            let n = out.aggregate.len().max(1) as f64;
            let mean = out.aggregate.iter().map(|r| r.total).sum::<f64>() / n;
            println!(
                "{} ({}): {} runs, mean GOSPA {mean:.4}, wrote {}",
                cfg.name,
                cfg.mode,
                cfg.num_runs,
                out.dir.display()
            );
        }
        Cmd::Compare(args) => {
            let (cfg, opts) = args.resolve()?;
            let s = compare_modes(&cfg, &opts)?.summary;
            println!("window {:?}: GOSPA pmbf-ac {:.4}, pmbf-a {:.4}", s.window, s.mean_total_ac, s.mean_total_a);
            println!(
                "  paired A − AC: {:.4} (t = {:.3}, p = {:.3e})",
                s.total_test.mean, s.total_test.t, s.total_test.p_value
            );
            println!(
                "step {}: missed pmbf-ac {:.4}, pmbf-a {:.4} (p = {:.3e})",
                s.interaction_step, s.missed_ac_at_step, s.missed_a_at_step, s.missed_test.p_value
            );
            println!("wrote {}", cfg.output_dir.display());
        }
        Cmd::Simulate { scenario, out } => {
            let s = ScenarioFile::load(&scenario)?.build()?;
            let truth = generate_truth(&s)?;
            let files = write_frames(&out, &truth, &render_all(&s, &truth))?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Cmd::Gospa { truth, est, run, c, p, alpha } => {
            let cfg = GospaConfig { c, p, alpha };
            let t = read_points(&truth, run)?;
            let e = read_points(&est, run)?;
            let steps: std::collections::BTreeSet<u64> = t.keys().chain(e.keys()).copied().collect();
            let mut out = std::io::stdout().lock();
            let none = Vec::new();
            // A closed stdout (e.g. piped into `head`) ends the listing quietly.
            if writeln!(out, "k,total,loc,missed,false").is_err() {
                return Ok(());
            }
            for k in steps {
                let g = gospa(t.get(&k).unwrap_or(&none), e.get(&k).unwrap_or(&none), &cfg)?;
                if writeln!(out, "{k},{},{},{},{}", g.total, g.localization, g.missed, g.false_).is_err() {
                    break;
                }
            }
        }
    }
    Ok(())
}

//! `fedseq` — experiment runner for the federated sequence-recognition
//! simulator. Subcommands: gen-data, train, sweep, analyze.

mod analyze;
mod config;
mod runner;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fedseq", version, about = "Federated sequence-recognition training simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic speaker-partitioned corpus (files + manifest).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per seed and write metrics, checkpoints, and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run seed; repeat for multi-seed experiments.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Client-level parallelism inside each run.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run one train per axis value over a shared corpus.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: local_epochs, cohort_size, alpha, epsilon,
        /// optimizer_pair, seed_start, scheduler, norm_placement.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (e.g. 1,4,16 or adam+sgd,adam+lamb).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Emit similarity grids and a report from a run's recorded updates.
    Analyze {
        /// A per-seed run directory containing updates.jsonl.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_out(flag: Option<PathBuf>, cfg: &config::ExperimentConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData { config, out } => {
            let cfg = config::load_config(&config)?;
            let manifest = runner::cmd_gen_data(&cfg, &out)?;
            println!("wrote {}", manifest.display());
        }
        Cmd::Train { config, seeds, out, workers } => {
            let cfg = config::load_config(&config)?;
            let out = resolve_out(out, &cfg)?;
            let summaries = runner::cmd_train(&cfg, &seeds, &out, workers)?;
            for s in &summaries {
                let outcome = match s.diverged_round {
                    Some(r) => format!("diverged at round {r}"),
                    None => format!(
                        "eval_loss {} eval_ter {}",
                        s.final_eval_loss.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                        s.final_eval_ter.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    ),
                };
                println!("seed {}: {outcome}", s.seed);
            }
            println!("summary: {}", out.join("summary.json").display());
        }
        Cmd::Sweep { config, axis, values, seeds, out, workers } => {
            let cfg = config::load_config(&config)?;
            let out = resolve_out(out, &cfg)?;
            sweep::cmd_sweep(&cfg, &axis, &values, &seeds, &out, workers)?;
            println!("comparison: {}", out.join("comparison.csv").display());
        }
        Cmd::Analyze { run, out } => {
            analyze::cmd_analyze(&run, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

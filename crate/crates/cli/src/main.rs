//! `ecosched run --config <path>` runs an experiment; `ecosched compare`
//! diffs summary files.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 some cells failed.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ecosched::experiment::{compare_reports, run_experiment, ExperimentConfig, RunSummary, COMPARISON_FILE};

#[derive(Debug, Parser)]
#[command(name = "ecosched", version, about = "Energy-aware task scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (scheduler, seed) cell of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare run summaries of the same workload.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> anyhow::Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    let outcome = run_experiment(&cfg)?;
    println!(
        "{} cell(s) completed, {} failed; comparison in {}",
        outcome.summaries.len(),
        outcome.failed.len(),
        cfg.output_dir.join(COMPARISON_FILE).display()
    );
    for (kind, agg) in &outcome.comparison.schedulers {
        println!(
            "{kind}: energy {:.1} J (min {:.1}, max {:.1}), mean execution time {:.3} s",
            agg.total_energy_j.mean, agg.total_energy_j.min, agg.total_energy_j.max, agg.mean_execution_time_s.mean
        );
    }
    Ok(if outcome.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn compare(paths: Vec<PathBuf>) -> anyhow::Result<ExitCode> {
    let summaries = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<RunSummary>(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let comparison = compare_reports(&summaries)?;
    println!("{}", serde_json::to_string_pretty(&comparison)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seeds } => run(config, out, seeds),
        Command::Compare { summaries } => compare(summaries),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

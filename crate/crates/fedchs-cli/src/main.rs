//! `fedchs` — drive the federated-training simulator from experiment
//! config files.
//!
//! Subcommands: `run` trains once and writes a trace, ledger, and summary;
//! `verify-bounds` audits a sequential run against its convergence bounds;
//! `compare` races several algorithms on identical data; `partition-stats`
//! reports how the data splits across clients and clusters. All take a
//! config path (see [`config`] for the format) plus `--seed`, `--out-dir`,
//! and `--quiet` overrides, and exit nonzero on any error or violated
//! asserted bound.

mod commands;
mod config;
mod error;
mod experiment;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "fedchs",
    version,
    about = "Simulate sequential federated training over clustered edge servers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once; write trace.csv, ledger.json, and summary.json.
    Run(Common),
    /// Run the sequential algorithm and audit its trace against the
    /// convergence bounds; write bound_report.json.
    VerifyBounds(Common),
    /// Run several algorithms on identical data; write comparison.csv.
    Compare(CompareArgs),
    /// Report shard sizes, label skew, and cluster masses; write
    /// partition_stats.json.
    PartitionStats(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines, `#` comments).
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Suppress progress output (files are still written).
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated algorithms to race (at least two of
    /// fedchs|fedavg|hfl|sfl).
    #[arg(long, value_delimiter = ',', required = true)]
    algos: Vec<String>,
    /// Accuracy threshold for the rounds/bits-to-target columns
    /// (classification models only).
    #[arg(long)]
    gamma: Option<f64>,
}

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(&common.config).map_err(|source| CliError::File {
        path: common.config.clone(),
        source,
    })?;
    let mut cfg = ExperimentConfig::from_text(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load_config(&common)?;
            commands::cmd_run(&cfg, common.quiet)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyBounds(common) => {
            let cfg = load_config(&common)?;
            let all_hold = commands::cmd_verify_bounds(&cfg, common.quiet)?;
            Ok(if all_hold {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Compare(args) => {
            let cfg = load_config(&args.common)?;
            commands::cmd_compare(&cfg, &args.algos, args.gamma, args.common.quiet)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PartitionStats(common) => {
            let cfg = load_config(&common)?;
            commands::cmd_partition_stats(&cfg, common.quiet)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

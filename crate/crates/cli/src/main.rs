//! `tvstab`: solve, certify, simulate and verify optimal control problems
//! with time-dependent costs from a TOML configuration.
//!
//! Exit status: 0 when every verdict passes, 2 when a verdict fails, 1 on
//! configuration or runtime errors.

mod config;
mod output;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tvstab::report::Verdict;

use config::{RunConfig, Setup};
use output::OutDir;

#[derive(Parser, Debug)]
#[command(name = "tvstab", version, about = "Value iteration and stability certificates for time-dependent costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Sampling seed; overrides `certification.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Leave timestamps out of JSON reports.
    #[arg(long, global = true)]
    no_timestamp: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Value iteration; writes value, mask and policy CSVs plus a report.
    Solve,
    /// Detectability, stabilizability, margin and envelope checks.
    Certify,
    /// Closed-loop rollouts checked against the trajectory bound.
    Simulate,
    /// Rollouts with the bound, Lyapunov-decrease and vartheta checks.
    Verify,
    /// Summarize the reports in the output directory.
    Report {
        /// Print the parsed configuration as TOML instead.
        #[arg(long)]
        echo_config: bool,
    },
}

fn run(cli: Cli) -> Result<Verdict> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let path = cli.config.as_ref().context("--config <path> is required")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.certification.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Command::Report { echo_config: true } = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(Verdict::Pass);
    }
    let out = OutDir::open(&cfg.output.dir, !cli.no_timestamp)?;
    if let Command::Report { .. } = cli.command {
        return pipeline::run_report(&out);
    }
    let setup = Setup::new(&cfg)?;
    match cli.command {
        Command::Solve => pipeline::run_solve(&cfg, &setup, &out),
        Command::Certify => pipeline::run_certify(&cfg, &setup, &out),
        Command::Simulate => pipeline::run_simulate(&cfg, &setup, &out, false),
        Command::Verify => pipeline::run_simulate(&cfg, &setup, &out, true),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

//! Batch experiment driver for the interference-queueing simulator.
//!
//! Subcommands: `simulate`, `cftp`, `oracle`, `verify`, `experiment`.
//! Exit codes: 0 on success, 1 when a check fails, 2 on usage or config
//! errors.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_config, ExperimentConfig};
use experiments::{run_cftp, run_experiment, run_oracle, run_simulate, run_verify, Sink};
use iqnet::noise::env_seed;

#[derive(Parser)]
#[command(name = "iqnet", version, about = "Interference queueing network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override; beats the config field and IQNET_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts (default iqnet-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replica count override.
    #[arg(long)]
    replicas: Option<usize>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One forward run; writes trajectory.csv and summary.json.
    Simulate(Common),
    /// Replicated backward sampling; one JSON record per run.
    Cftp(Common),
    /// Exact stationary solve on a tiny domain.
    Oracle(Common),
    /// Run the verification battery.
    Verify(Common),
    /// Run the experiment named in the config.
    Experiment(Common),
}

enum Failure {
    /// Usage or config problem (exit 2).
    Usage(String),
    /// Runtime error (exit 2).
    Runtime(String),
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, Vec<String>), Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required for this subcommand".to_string()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let (cfg, warnings) = parse_config(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    if !common.quiet {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok((cfg, warnings))
}

fn make_sink(common: &Common, cfg_out: Option<&PathBuf>) -> Result<Sink, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg_out.cloned())
        .unwrap_or_else(|| PathBuf::from("iqnet-out"));
    Sink::new(dir, common.quiet).map_err(|e| Failure::Runtime(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, warnings) = load_config(&common)?;
            let sink = make_sink(&common, cfg.out.as_ref())?;
            let seed = cfg.resolved_seed(common.seed);
            run_simulate(&cfg, seed, warnings, &sink).map_err(|e| Failure::Runtime(e.to_string()))
        }
        Command::Cftp(common) => {
            let (cfg, warnings) = load_config(&common)?;
            let sink = make_sink(&common, cfg.out.as_ref())?;
            let seed = cfg.resolved_seed(common.seed);
            let replicas = common.replicas.unwrap_or(cfg.replicas);
            run_cftp(&cfg, seed, replicas, warnings, &sink)
                .map_err(|e| Failure::Runtime(e.to_string()))
        }
        Command::Oracle(common) => {
            let (cfg, warnings) = load_config(&common)?;
            let sink = make_sink(&common, cfg.out.as_ref())?;
            let seed = cfg.resolved_seed(common.seed);
            run_oracle(&cfg, seed, warnings, &sink).map_err(|e| Failure::Runtime(e.to_string()))
        }
        Command::Verify(common) => {
            let sink = make_sink(&common, None)?;
            let seed = common.seed.or_else(env_seed).unwrap_or(0);
            run_verify(seed, &sink).map_err(|e| Failure::Runtime(e.to_string()))
        }
        Command::Experiment(common) => {
            let (cfg, warnings) = load_config(&common)?;
            let kind = cfg.experiment.ok_or_else(|| {
                Failure::Usage("config has no \"experiment\" field".to_string())
            })?;
            let sink = make_sink(&common, cfg.out.as_ref())?;
            let seed = cfg.resolved_seed(common.seed);
            let replicas = common.replicas.unwrap_or(cfg.replicas);
            run_experiment(&cfg, kind, seed, replicas, warnings, &sink)
                .map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) | Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

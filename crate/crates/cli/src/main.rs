use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trafficgp::commands::{
    cmd_benchmark, cmd_evaluate, cmd_generate, cmd_train, parse_strategy, resolve_out_dir,
    CliError,
};
use trafficgp::config::{RunConfig, TrainMode};
use trafficgp::report::read_train_report;

#[derive(Parser)]
#[command(
    name = "trafficgp",
    version,
    about = "Composite-kernel GP traffic forecasting with consensus-ADMM training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic traffic CSV from the config's data section.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (centralized or ADMM) and write report.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (falls back to config.output).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's train.mode (centralized|admm).
        #[arg(long)]
        mode: Option<TrainMode>,
    },
    /// Score a trained model on the test split and write evaluation.json.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Trained report.json from `train`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the strategy (rbcm|centralized|sod:K).
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<trafficgp_core::fusion::FusionStrategy>,
    },
    /// Fixed-iteration scaling benchmark over worker counts.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated worker counts, e.g. 2,4,8,16.
        #[arg(long, value_delimiter = ',', required = true)]
        k_list: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Outer ADMM iterations per run.
        #[arg(long, default_value_t = 5)]
        outer_iterations: usize,
        /// Runs per K; the CSV reports medians.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Serve one coordinator connection as an ADMM worker.
    Worker {
        /// Listen address, e.g. 127.0.0.1:7001.
        #[arg(long)]
        listen: String,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out } => {
            let config = RunConfig::load(&config)?;
            cmd_generate(&config, &out)
        }
        Command::Train { config, out, mode } => {
            let config = RunConfig::load(&config)?;
            let out_dir = resolve_out_dir(out, &config)?;
            cmd_train(&config, &out_dir, mode).map(|_| ())
        }
        Command::Evaluate {
            config,
            report,
            out,
            strategy,
        } => {
            let config = RunConfig::load(&config)?;
            let trained = read_train_report(&report)?;
            let out_dir = resolve_out_dir(out, &config)?;
            cmd_evaluate(&config, &trained, &out_dir, strategy).map(|_| ())
        }
        Command::Benchmark {
            config,
            k_list,
            out,
            outer_iterations,
            repeats,
        } => {
            let config = RunConfig::load(&config)?;
            let out_dir = resolve_out_dir(out, &config)?;
            cmd_benchmark(&config, &k_list, &out_dir, outer_iterations, repeats).map(|_| ())
        }
        Command::Worker { listen } => {
            trafficgp_cluster::worker_serve(&listen).map_err(CliError::from)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("TRAFFICGP_LOG", "error"),
    )
    .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

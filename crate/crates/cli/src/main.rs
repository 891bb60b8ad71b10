//! `rgs`: dataset generation, two-stage training, evaluation, sampling and
//! scenario replay for the gaze-shift toolkit.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "rgs", version, about = "Gaze-shift motion generation and gaze-target reasoning toolkit")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// RNG seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic gaze-shift dataset.
    GenData(commands::gen_data::GenDataArgs),
    /// Train the VQ-VAE (stage 1) and/or the conditional prior (stage 2).
    Train(commands::train::TrainArgs),
    /// Evaluate trained checkpoints on the validation split.
    Eval(commands::eval::EvalArgs),
    /// Draw motion allocations for one condition from the trained prior.
    Sample(commands::sample::SampleArgs),
    /// Replay recorded scenarios through the gaze reasoning pipeline.
    Replay(commands::replay::ReplayArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::GenData(a) => commands::gen_data::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Sample(a) => commands::sample::run(a),
        Command::Replay(a) => commands::replay::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Failure::code_of(&e))
        }
    }
}

//! `lcode` — reproducible learning-curve extrapolation runs.
//!
//! Subcommands cover the full loop: `generate` a synthetic benchmark,
//! `split` it, `train` a model, `predict` held-out curves, `rank`
//! configurations, and `eval` predictions against the truth.  Every run
//! writes a manifest recording the resolved config, input hashes, and
//! timings; all randomness flows from a single `--seed` through named
//! sub-streams, and reruns are byte-identical (manifests aside).

mod commands;
mod config_file;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config_file::ConfigFile;

#[derive(Parser)]
#[command(name = "lcode", version, about = "Learning-curve extrapolation runs")]
struct Cli {
    /// `key = value` file consulted for any flag left unset
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads; outputs never depend on this
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset (JSONL)
    Generate(commands::generate::GenerateArgs),
    /// Split a dataset into train and test files
    Split(commands::split::SplitArgs),
    /// Train a model and write a checkpoint plus a training log
    Train(commands::train::TrainArgs),
    /// Extrapolate curves for every trial in a dataset
    Predict(commands::predict::PredictArgs),
    /// Pick the predicted-best trial and score the pick
    Rank(commands::rank::RankArgs),
    /// Score predictions against true curves at several lengths
    Eval(commands::eval::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::empty(),
    };
    let threads = file.or_default(cli.threads, "threads", 1)?;
    if threads == 0 {
        anyhow::bail!("--threads must be at least 1");
    }
    match cli.command {
        Command::Generate(args) => commands::generate::run(args, &file, threads),
        Command::Split(args) => commands::split::run(args, &file),
        Command::Train(args) => commands::train::run(args, &file, threads),
        Command::Predict(args) => commands::predict::run(args, &file, threads),
        Command::Rank(args) => commands::rank::run(args, &file, threads),
        Command::Eval(args) => commands::eval::run(args, &file),
    }
}

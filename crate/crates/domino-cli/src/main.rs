//! `domino` — train, calibrate and evaluate a small pixel classifier with
//! domain-aware penalty-matrix regularization, on synthetic phantom data.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric
//! failure during training or evaluation.

mod commands;
mod config;
mod parallel;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{PenaltyMode, TrainMode, TrainOverrides};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "domino",
    version,
    about = "Domain-aware penalty-matrix calibration for pixel classifiers"
)]
struct Cli {
    /// JSON run configuration; built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Phantom {
        /// Number of samples to generate.
        #[arg(long)]
        count: usize,
        /// Output dataset directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the phantom seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model: plain, confusion-calibrated, or hierarchy-calibrated.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        /// Training dataset directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Held-out dataset for the confusion estimate (cm mode only).
        #[arg(long, value_name = "DIR")]
        heldout: Option<PathBuf>,
        /// Output directory for the model and its artifacts.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the regularization weight (0 to 1).
        #[arg(long)]
        beta: Option<f64>,
        /// Override the maximum penalty scale.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Evaluate a trained model on a dataset.
    Eval {
        /// Model file written by `train`.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Dataset directory to evaluate on.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output directory for the report and plots.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also report at the merged granularity from the config group map.
        #[arg(long)]
        merged: bool,
    },
    /// Build a penalty matrix without training.
    Penalty {
        #[arg(long, value_enum)]
        mode: PenaltyMode,
        /// Confusion-count CSV (cm mode only).
        #[arg(long, value_name = "PATH")]
        confusion: Option<PathBuf>,
        /// Output directory for penalty.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the maximum penalty scale.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Re-render reliability CSVs from a previous eval into SVG plots.
    Report {
        /// Directory holding reliability_*.csv files from `eval`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output directory for the SVG plots.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also render the merged-granularity plot.
        #[arg(long)]
        merged: bool,
    },
}

fn run(cli: &Cli) -> domino_core::Result<String> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Phantom { count, out, seed } => {
            commands::cmd_phantom(&cfg, *count, out, *seed)
        }
        Command::Train {
            mode,
            data,
            heldout,
            out,
            seed,
            beta,
            scale,
        } => commands::cmd_train(
            &cfg,
            *mode,
            data,
            heldout.as_deref(),
            out,
            TrainOverrides {
                seed: *seed,
                beta: *beta,
                scale: *scale,
            },
        ),
        Command::Eval {
            model,
            data,
            out,
            merged,
        } => commands::cmd_eval(&cfg, model, data, out, *merged),
        Command::Penalty {
            mode,
            confusion,
            out,
            scale,
        } => commands::cmd_penalty(&cfg, *mode, confusion.as_deref(), out, *scale),
        Command::Report { data, out, merged } => {
            commands::cmd_report(&cfg, data, out, *merged)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => println!("{}", summary),
        Err(e) => {
            eprintln!("error: {}", e);
            std::process::exit(if e.is_numeric() { 3 } else { 2 });
        }
    }
}

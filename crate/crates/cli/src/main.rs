//! `streamgcn`: stream extraction, synthetic data, training, evaluation and
//! score fusion for skeleton action recognition.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "streamgcn",
    version,
    about = "Multi-stream graph convolutional action recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Key-value config shared by the commands that take one.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines. Defaults to $STREAMGCN_CONFIG.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the six motion streams of a skeleton file or directory.
    Extract {
        /// A `.skel` file or a directory of them.
        #[arg(long)]
        input: PathBuf,
        /// Output `.streams` file, or directory when the input is one.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset of articulated chains.
    Synth {
        /// Output directory; gets `train/` and `test/` when a test split is requested.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one stream network.
    Train {
        /// Directory of `.streams` or `.skel` files.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for `model.ckpt`, `metrics.csv` and `scores.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Held-out directory scored after training.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Stream to train on, e.g. `joint_angular_acceleration`.
        #[arg(long)]
        stream: Option<String>,
        /// `ce` or `ib`.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print one line per epoch.
        #[arg(long)]
        verbose: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on a labeled directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write per-sample class probabilities here.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Fuse per-stream score files by weighted sum.
    Ensemble {
        /// Score CSV files written by `train` or `eval`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated weights, one per input. Defaults to all ones.
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        /// Write the fused scores here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of a whole network.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Dump the per-block channel attention for one sample as CSV.
    AttnDump {
        #[arg(long)]
        model: PathBuf,
        /// A `.skel` or `.streams` file.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

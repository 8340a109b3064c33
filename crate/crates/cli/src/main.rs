//! `ncd`: generate synthetic data, train, evaluate and ablate novel class
//! discovery models from a single config file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ncd", version, about = "Novel class discovery on synthetic Gaussian data")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both the data seed and the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Aware,
    Agnostic,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset as CSV (`<out>/data.csv`).
    GenData,
    /// Supervised pretraining on the labelled pool.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Joint discovery training from a pretrain checkpoint.
    Discover {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "from_scratch")]
        checkpoint: Option<PathBuf>,
        /// Start from a freshly initialised model instead of a checkpoint.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Score a checkpoint under the task-aware and/or task-agnostic protocol.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        protocol: ProtocolArg,
    },
    /// Train the five canonical variants over `ablation.seeds`.
    Ablate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write test-sample logits for external visualisation.
    ExportEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ncd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dsparse", version, about = "Sparse dynamic-expert knowledge graph link prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where the data and hyperparameters come from.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding train.txt, valid.txt and test.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the synthetic graph with N entities instead of a data directory.
    #[arg(long, value_name = "N")]
    pub toy: Option<usize>,
    #[arg(long)]
    pub toy_seed: Option<u64>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or more models and evaluate them.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write report files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one architecture switch over a grid.
    Ablate {
        /// sparsity | experts | depth | downscale | dropout | components
        #[arg(long)]
        mode: String,
        /// Comma-separated grid; the mode's default when omitted.
        #[arg(long, default_value = "")]
        grid: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the gate weights of every training pair as CSV.
    ExportGates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Include valid and test pairs too.
        #[arg(long)]
        all_splits: bool,
    },
    /// Write the synthetic graph as a data directory.
    MakeToy {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

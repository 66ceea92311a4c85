//! `evmscan`: disassemble, synthesize, ingest, train, evaluate and scan.
//!
//! Exit status: 0 on success, 1 on any error, 2 when `scan` flags at
//! least one contract as vulnerable.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "evmscan", version, about = "EVM bytecode vulnerability scanner")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Shared {
    /// Seed for every random stream (split, init, shuffling, dropout, synthesis).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Override a setting, e.g. `--config ff_dim=512` (repeatable).
    #[arg(long = "config", global = true, value_name = "KEY=VALUE")]
    pub config: Vec<String>,
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelArg>,
    /// Label taxonomy: 2 (normal / vulnerable) or 4 (normal, suicidal, prodigal, greedy).
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(["2", "4"]))]
    pub classes: Option<String>,
    #[arg(long, global = true)]
    pub window_size: Option<usize>,
    #[arg(long, global = true)]
    pub overlap: Option<f64>,
    #[arg(long = "agg", global = true, value_enum)]
    pub aggregation: Option<AggArg>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Output file (directory for `train`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset CSV files have a header row.
    #[arg(long, global = true)]
    pub header: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModelArg {
    Transformer,
    Lstm,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum AggArg {
    Max,
    Mean,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify contracts from a hex file or a dataset CSV.
    Scan {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Exit 1 when any record fails to parse.
        #[arg(long)]
        strict: bool,
    },
    /// Split, fit the vocabulary, train and evaluate on a dataset CSV.
    Train { dataset: PathBuf },
    /// Evaluate a checkpoint on every row of a dataset CSV.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fetch verified contracts for a list of addresses and label them heuristically.
    Ingest {
        addresses: PathBuf,
        #[arg(long, env = "ETHERSCAN_API_KEY", hide_env_values = true)]
        api_key: String,
        #[arg(long, default_value = evmscan::corpus::api::DEFAULT_URL)]
        api_url: String,
        /// Directory for ADDRESS_NAME.sol source files.
        #[arg(long)]
        source_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        retries: u32,
    },
    /// Write a synthetic labeled corpus.
    Synth {
        n: usize,
        #[arg(long, default_value_t = 200)]
        min_len: usize,
        #[arg(long, default_value_t = 3000)]
        max_len: usize,
    },
    /// Print the instruction listing of a hex bytecode file.
    Disasm { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

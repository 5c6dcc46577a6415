//! Batch pipeline behind the `jmrp` binary.
//!
//! Each subcommand reads plain CSV/JSON/TOML files, writes its artifacts into
//! `--out-dir` and records a `manifest.json` with input and output digests.

pub mod commands;
pub mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CONVERGENCE: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError { code: EXIT_IO, message: format!("i/o error on {}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<jmrp_core::Error> for CliError {
    fn from(e: jmrp_core::Error) -> Self {
        use jmrp_core::Error as E;
        let code = match &e {
            E::Schema(_) | E::Dimension(_) | E::Parse { .. } => EXIT_CONFIG,
            E::Io { .. } => EXIT_IO,
            E::Domain(_) | E::Infeasible { .. } | E::Degenerate(_) | E::NoData(_) => EXIT_NUMERIC,
            E::Convergence { .. } | E::Initialization(_) => EXIT_CONVERGENCE,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "jmrp", version, about = "Joint MRP small-area estimation pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Command configuration (JSON, or TOML by extension)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every subcommand derives its own stream from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for chain sampling (1 = sequential)
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic survey with known truth
    Simulate,
    /// Fit the multilevel model by NUTS
    Fit(commands::fit::FitArgs),
    /// Rake a poststratification table to known margins
    Rake(commands::rake::RakeArgs),
    /// Produce direct and model-based estimates
    Estimate(commands::estimate::EstimateArgs),
    /// Score estimates against truth or a reference survey
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Score and classify food consumption records
    Fcs(commands::fcs::FcsArgs),
    /// Fill phone ownership probabilities from an ownership model
    ImputePhone(commands::impute::ImputeArgs),
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let out = &cli.global.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match &cli.command {
        Command::Simulate => commands::simulate::run(&cli.global),
        Command::Fit(a) => commands::fit::run(&cli.global, a),
        Command::Rake(a) => commands::rake::run(&cli.global, a),
        Command::Estimate(a) => commands::estimate::run(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate::run(&cli.global, a),
        Command::Fcs(a) => commands::fcs::run(&cli.global, a),
        Command::ImputePhone(a) => commands::impute::run(&cli.global, a),
    }
}

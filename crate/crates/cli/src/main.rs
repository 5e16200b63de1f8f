//! `divacq`: generate corpora, fit descriptors, homogenize shapes, run
//! acquisitions and report diversity metrics.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical failure. `DIVACQ_THREADS` sets the worker thread count.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "divacq",
    version,
    about = "Diversity-driven acquisition of structure-property datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic lattice corpus as a shape pack.
    GenCorpus(commands::GenCorpusArgs),
    /// Fit a PCA descriptor on a corpus, or validate imported latents.
    Descriptor(commands::DescriptorArgs),
    /// Homogenize shapes and write a property CSV.
    Evaluate(commands::EvaluateArgs),
    /// Run an acquisition from a TOML config.
    Run(RunArgs),
    /// Distance gains of a manifest against its population.
    Metrics(commands::MetricsArgs),
    /// Re-export CSVs (and optionally PGM images) from a checkpoint.
    Export(commands::ExportArgs),
}

#[derive(clap::Args)]
pub struct RunArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many iterations in this invocation (the checkpoint
    /// allows resuming later).
    #[arg(long)]
    max_iterations: Option<usize>,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DIVACQ_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "DIVACQ_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Descriptor(a) => commands::descriptor(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Run(a) => commands::run(a.config, a.seed, a.resume, a.max_iterations),
        Command::Metrics(a) => commands::metrics(a),
        Command::Export(a) => commands::export(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

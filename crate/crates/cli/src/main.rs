//! `viewset`: dataset generation, sequence normalization, grid fitting and
//! oracle sampling.

mod config;
mod fit;
mod generate;
mod normalize;
mod sample;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ConfigFile;

/// Exit status of a completed subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Diverged,
    Rejected,
}

impl Status {
    fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Diverged => 3,
            Status::Rejected => 4,
        }
    }
}

/// Exit status for errors: bad arguments, unreadable inputs or failed preconditions.
const ERROR_CODE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "viewset", version, about = "Voxel radiance field tools for posed viewsets")]
#[command(after_help = "Exit status: 0 success, 2 invalid input or failed precondition, 3 fit divergence, 4 sequence rejected by the filter.")]
struct Cli {
    /// Global seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 picks one per core). Results are reproducible for a fixed value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with settings, overridden by explicit flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a Minens dataset of articulated block characters.
    Generate(generate::Args),
    /// Normalize a camera sequence and its point cloud, and screen it.
    Normalize(normalize::Args),
    /// Fit a voxel grid to the training views of a dataset example.
    Fit(fit::Args),
    /// Run DDIM sampling with an oracle denoiser that returns a known grid.
    Sample(sample::Args),
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: u64,
    pub threads: usize,
}

fn run(cli: Cli) -> Result<Status> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(file.seed()?).unwrap_or(0);
    let threads = cli.threads.or(file.threads()?).unwrap_or(1);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("starting the thread pool")?;
    let globals = Globals { seed, threads: rayon::current_num_threads() };
    match cli.command {
        Command::Generate(a) => generate::run(&globals, a.resolve(&file)?),
        Command::Normalize(a) => normalize::run(&globals, a.resolve(&file)?),
        Command::Fit(a) => fit::run(&globals, a.resolve(&file)?),
        Command::Sample(a) => sample::run(&globals, a.resolve(&file)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ERROR_CODE)
        }
    }
}

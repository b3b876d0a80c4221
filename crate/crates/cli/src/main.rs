//! `spherecox` batch front-end.
//!
//! Every command reads a TOML configuration (or the JSON sidecar of an earlier
//! output, which embeds its resolved configuration), applies flag overrides and
//! writes CSV tables with JSON sidecars into `--out-dir`.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spherecox::{Baseline, BqConvention};

use config::{Config, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "spherecox",
    version,
    about = "Cox processes on the sphere: simulation and scale-wise summaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration, or a JSON sidecar from a previous run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[arg(long, global = true)]
    baseline: Option<BaselineArg>,

    #[arg(long, global = true)]
    bq_convention: Option<ConventionArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Field dumps and point patterns.
    Simulate,
    /// Shannon and Renyi distance tables.
    Distances,
    /// Per-scale K-function grids and differences to the null.
    Kfun,
    /// Least-squares fit of theta.
    Fit,
    /// Aggregation / regular / inhibition labels.
    Classify,
}

#[derive(ValueEnum, Clone, Copy)]
enum BaselineArg {
    /// Null K of a Poisson pattern under the same edge handling.
    Selfconsistent,
    /// The classical 2πt(1 - cos θ).
    #[value(name = "paper")]
    Classical,
}

#[derive(ValueEnum, Clone, Copy)]
enum ConventionArg {
    Weighted,
    Raw,
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.apply(&Overrides {
        seed: cli.seed,
        workers: cli.workers,
        baseline: cli.baseline.map(|b| match b {
            BaselineArg::Selfconsistent => Baseline::SelfConsistent,
            BaselineArg::Classical => Baseline::Classical,
        }),
        bq_convention: cli.bq_convention.map(|c| match c {
            ConventionArg::Weighted => BqConvention::Weighted,
            ConventionArg::Raw => BqConvention::Raw,
        }),
    });
    config.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let out = &cli.out_dir;
    match cli.command {
        Command::Simulate => commands::simulate(&config, out),
        Command::Distances => commands::distances(&config, out),
        Command::Kfun => commands::kfun(&config, out),
        Command::Fit => commands::fit(&config, out),
        Command::Classify => commands::classify(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spherecox: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `gravimet` command line: config loading, commands and report emission.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, EXIT_CONFIG, EXIT_OK};
use config::{Format, Overrides, RunConfig};

/// Parallelism cap read at startup.
pub const THREADS_ENV: &str = "GRAVIMET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gravimet", version, about = "Gravity-type panel regressions for bilateral migration flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel with known parameters.
    Synth(CommonArgs),
    /// Summary statistics, correlations and within-variation.
    Describe(CommonArgs),
    /// FE, pooled and RE fits with F and Hausman tests per model spec.
    Fit(CommonArgs),
    /// Robustness battery over the baseline spec.
    Robustness(CommonArgs),
    /// Marginal-effect curves from interaction fits.
    Margins(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Synth(a) | Command::Describe(a) | Command::Fit(a) | Command::Robustness(a) | Command::Margins(a) => a,
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| Failure {
        code: EXIT_CONFIG,
        message: format!("{THREADS_ENV}={raw} is not a positive integer"),
    })?;
    // a second call in the same process keeps the existing pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let a = cli.command.args();
    let mut cfg = RunConfig::load(&a.config).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    })?;
    cfg.apply(&Overrides {
        out: a.out.clone(),
        format: a.format,
        seed: a.seed,
    });
    match cli.command {
        Command::Synth(_) => commands::cmd_synth(&cfg),
        Command::Describe(_) => commands::cmd_describe(&cfg),
        Command::Fit(_) => commands::cmd_fit(&cfg),
        Command::Robustness(_) => commands::cmd_robustness(&cfg),
        Command::Margins(_) => commands::cmd_margins(&cfg),
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main_exit_code() -> i32 {
    match run(Cli::parse()) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("gravimet: {}", f.message);
            f.code
        }
    }
}

//! Command-line driver: config loading, reference-path caching and the
//! `train`, `sample`, `eval`, `order`, `equiv` and `validate-config` commands.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or input error,
//! 3 numerical abort, 4 tolerance violation.

pub mod cache;
mod commands;
pub mod config;

use std::path::PathBuf;

use bespoke_core::BespokeError;
use clap::{Parser, Subcommand, ValueEnum};

pub use commands::run_command;
pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(BespokeError),
    Tolerance(String),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Tolerance(m) => write!(f, "tolerance violated: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Tolerance(_) => 4,
        }
    }
}

impl From<BespokeError> for CliError {
    fn from(e: BespokeError) -> Self {
        match e {
            BespokeError::Io(io) => CliError::Io(io),
            e if e.is_numerical() => CliError::Numerical(e),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    PlainRk1,
    PlainRk2,
}

#[derive(Debug, Parser)]
#[command(name = "bespoke", version, about = "Train and evaluate learned scale-time ODE solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: `io.out_dir`, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reference-path cache directory (default: `io.cache_dir`, else `<out>/gt-cache`).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed overriding every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a scheme and write scheme.json, history.csv and summary.json.
    Train,
    /// Run a scheme from standard normal starts and write samples.csv.
    Sample {
        /// Scheme file written by `train`.
        #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
        scheme: Option<PathBuf>,
        /// Identity scheme of a plain solver.
        #[arg(long)]
        builtin: Option<Builtin>,
        /// Steps for a builtin scheme (default: `solver.n`).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Output file (default: `<out>/samples.csv`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// RMSE and PSNR against NFE for baselines and trained schemes.
    Eval,
    /// Empirical local order of a base or bespoke step.
    Order,
    /// Scale-time equivalence of two schedulers.
    Equiv,
    /// Parse and validate the config, then exit.
    ValidateConfig,
}

/// Parse-free entry point used by `main`; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("configuration error: --threads must be at least 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run_command(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

//! `fvml`: mesh generation, dataset generation, gradient check, training,
//! simulation and benchmarks, all driven by one TOML configuration.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_GRADCHECK: u8 = 4;

const EXIT_HELP: &str = "\
EXIT STATUS
  0  success
  1  I/O failure
  2  invalid configuration or input files
  3  numerical failure (inadmissible state, rejected step, divergence)
  4  gradient check failed (or train started without a passing check)

ENVIRONMENT
  FVML_OUTPUT  output root, same as --output
  RUST_LOG     log filter, overrides -v
";

#[derive(Parser, Debug)]
#[command(
    name = "fvml",
    version,
    about = "Finite-volume Euler solver with a learned gradient correction"
)]
#[command(after_help = long_help())]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides `output` in the configuration.
    #[arg(short, long, global = true, env = "FVML_OUTPUT")]
    output: Option<PathBuf>,
    /// Model checkpoint for `simulate` and `bench`, or the starting point for `train`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Train without a passing gradient check for this mesh and network.
    #[arg(long)]
    skip_gradcheck: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

fn long_help() -> String {
    format!("{}\n{}", config::CONFIG_KEYS, EXIT_HELP)
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build the mesh and write `mesh/mesh.txt`.
    Mesh,
    /// Generate reference trajectories on the once-refined mesh and write `dataset/`.
    Dataset,
    /// Compare reverse-mode and finite-difference gradients; writes `gradcheck/`.
    Gradcheck,
    /// Train the correction network on `dataset/`; writes `train/`.
    Train,
    /// Run the solver (with the correction when --checkpoint is given); writes `simulate/`.
    Simulate,
    /// Run the configured `[bench.*]` studies; writes `bench/`.
    Bench,
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(what: &std::path::Path, e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: format!("{}: {e}", what.display()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<fvml::Error> for Failure {
    fn from(e: fvml::Error) -> Self {
        let code = match &e {
            e if e.is_numeric() => EXIT_NUMERIC,
            fvml::Error::Io(_) => 1,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .clone()
        .ok_or_else(|| Failure::config("no configuration given (use --config)"))?;
    let cfg = RunConfig::load(&path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let ctx = commands::Context {
        output: cli.output.clone().unwrap_or_else(|| cfg.output.clone()),
        hash: cfg.hash(),
        base,
        checkpoint: cli.checkpoint.clone(),
        skip_gradcheck: cli.skip_gradcheck,
        cfg,
    };
    log::info!("config {} -> {}", ctx.hash, ctx.output.display());
    match cli.command {
        Command::Mesh => commands::mesh(&ctx),
        Command::Dataset => commands::dataset(&ctx),
        Command::Gradcheck => commands::gradcheck(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Bench => commands::bench(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

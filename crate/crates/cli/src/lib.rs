//! `nvmrlsim` command-line front end.
//!
//! Every subcommand renders one table to stdout (or `--out`) as CSV or JSON.
//! Notes and diagnostics go to stderr, one line each, prefixed `nvmrlsim:`.

pub mod config;
pub mod output;

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use nvmrl_core::TrainingPolicy;

pub use config::{BatchRange, RunConfig};
pub use output::{Cell, Format, Table};

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "NVMRLSIM_CONFIG";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_MODULE: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Core(nvmrl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_config() || matches!(e, nvmrl_core::Error::Io(_)) => EXIT_CONFIG,
            CliError::Core(_) => EXIT_MODULE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<nvmrl_core::Error> for CliError {
    fn from(e: nvmrl_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "nvmrlsim", version, about = "Latency/energy model of an NVM-backed CNN training accelerator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Falls back to $NVMRLSIM_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write the table here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Comma-separated, e.g. E2E,L2,L3,L4.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub policies: Option<Vec<TrainingPolicy>>,
    /// N or A..B.
    #[arg(long, global = true, value_name = "A..B")]
    pub batch: Option<BatchRange>,
    /// Reference table; given without a value, the shipped table.
    #[arg(long, global = true, value_name = "PATH", num_args = 0..=1, default_missing_value = "",
          value_parser = clap::value_parser!(OsString))]
    pub reference: Option<OsString>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer shapes, MACs and weight footprints.
    Shapes,
    /// Array mappings for the forward and backward passes.
    Plan {
        /// Defaults to E2E.
        #[arg(long)]
        policy: Option<TrainingPolicy>,
    },
    /// Per-layer latency and energy for one policy and batch size.
    Cost {
        /// Defaults to E2E.
        #[arg(long)]
        policy: Option<TrainingPolicy>,
    },
    /// Per-image training cost of each policy relative to E2E.
    Compare,
    /// Training fps over a batch range.
    Sweep,
    /// Highest safe velocity for each frame rate and environment.
    Envelope {
        /// Comma-separated frame rates; default is the model fps per policy.
        #[arg(long, value_delimiter = ',')]
        fps: Option<Vec<f64>>,
    },
    /// Fit free hardware parameters to the reference table.
    Calibrate {
        /// Comma-separated subset of clock,mac,sram,static.
        #[arg(long, value_delimiter = ',')]
        free: Option<Vec<String>>,
        /// Write the fitted hardware spec here.
        #[arg(long, value_name = "PATH")]
        write_hw: Option<PathBuf>,
    },
    /// Meta-train and fine-tune the toy Q-network on the corridor world.
    TrainToy {
        #[arg(long)]
        meta_steps: Option<usize>,
        #[arg(long)]
        fine_tune_steps: Option<usize>,
        /// One row per (policy, seed) instead of the full series.
        #[arg(long)]
        summary: bool,
    },
    /// Validate a reference table and print its totals.
    CheckReference {
        /// Table to check; defaults to --reference or the shipped table.
        path: Option<PathBuf>,
        /// Re-emit the parsed table instead of the totals.
        #[arg(long)]
        emit: bool,
    },
}

/// Collapses a message onto one line.
fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

pub(crate) fn note(err: &mut dyn Write, msg: &str) {
    let _ = writeln!(err, "nvmrlsim: note: {}", one_line(msg));
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::var_os(CONFIG_ENV).map(PathBuf::from), stdout, stderr)
}

/// As [`run`], with the config-path environment value passed in.
pub fn run_with_env<I, T>(args: I, env_config: Option<PathBuf>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            if matches!(e.kind(), ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand | ErrorKind::MissingSubcommand) {
                let _ = writeln!(stderr, "nvmrlsim: error: no subcommand given");
                let _ = write!(stderr, "{}", Cli::command().render_help());
                return EXIT_USAGE;
            }
            let msg = e.to_string();
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg);
            let _ = writeln!(stderr, "nvmrlsim: error: {}", one_line(msg));
            return EXIT_USAGE;
        }
    };
    match commands::execute(cli, env_config, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "nvmrlsim: error: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

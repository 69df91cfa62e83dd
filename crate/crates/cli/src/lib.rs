//! Command-line driver: dataset generation, experiment runs, parameter
//! sweeps and report merging.

pub mod commands;
pub mod error;
pub mod output;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::SweepAxis;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "decomp", version, about = "Region-level active-learning experiments")]
pub struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "DECOMP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set dataset.noise=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in DTEN format.
    Gen(ConfigArgs),
    /// Run every configured strategy and repeat.
    Run(ConfigArgs),
    /// Run a config across the values of one axis.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
    /// Merge cycle tables into one long-format CSV.
    Report {
        /// Run directories or CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let work = || match &cli.command {
        Command::Gen(a) => commands::cmd_gen(a.config.as_deref(), &a.sets, &a.out),
        Command::Run(a) => commands::cmd_run(a.config.as_deref(), &a.sets, &a.out),
        Command::Sweep { args, axis } => commands::cmd_sweep(args.config.as_deref(), &args.sets, *axis, &args.out),
        Command::Report { inputs, out } => commands::cmd_report(inputs, out),
    };
    match cli.threads {
        Some(0) => Err(CliError::Validation("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_VALIDATION } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("decomp: {e}");
            e.exit_code()
        }
    }
}

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Common;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mks", version, about = "Keller-Segel particle system and PDE laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Config file (TOML, or JSON with the same schema).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory. Defaults to a fresh directory under $MKS_OUT_DIR (or ./runs).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the interacting particle system.
    Simulate(Shared),
    /// Solve the PDE, with or without the drift cutoff.
    SolvePde(Shared),
    /// Particle-vs-PDE convergence study over an N ladder.
    Converge(Shared),
    /// Estimate A0 = sup_t |∇c_t|_∞ from an uncut PDE solve.
    EstimateA0(Shared),
    /// Run the acceptance suite.
    Verify {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
        /// Kernel normalization under test; anything but 1 must fail.
        #[arg(long, default_value_t = 1.0, hide = true)]
        kernel_scale: f64,
    },
}

fn common(s: Shared) -> CliResult<Common> {
    let threads = match s.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(k) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
            k
        }
        None => rayon::current_num_threads(),
    };
    Ok(Common {
        config: s.config,
        out: s.out,
        seed: s.seed,
        threads,
    })
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(s) => commands::cmd_simulate(&common(s)?).map(drop),
        Command::SolvePde(s) => commands::cmd_solve_pde(&common(s)?).map(drop),
        Command::Converge(s) => commands::cmd_converge(&common(s)?).map(drop),
        Command::EstimateA0(s) => commands::cmd_estimate_a0(&common(s)?).map(drop),
        Command::Verify {
            shared,
            only,
            kernel_scale,
        } => commands::cmd_verify(&common(shared)?, only, kernel_scale).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are config errors; help and version exit cleanly.
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

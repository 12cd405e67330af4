use std::path::PathBuf;
use std::process::ExitCode;

use carbon_hjb_cli::{load_config, run_solve, run_sweep, run_verify, CliError};
use clap::{Parser, Subcommand};

/// Optimal production under a cap-and-trade allowance market.
///
/// Every configuration key can be overridden with an environment variable
/// `CARBON_HJB_<KEY>`, e.g. `CARBON_HJB_GAMMA_VOL=1.5`.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides `out_dir`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary output
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and export the fields
    Solve { config: PathBuf },
    /// Solve for every (gamma, alpha) pair and write sweep.csv
    Sweep { config: PathBuf },
    /// Compare a fresh solve with Monte Carlo estimates
    Verify { config: PathBuf },
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = match &cli.command {
        Command::Solve { config } | Command::Sweep { config } | Command::Verify { config } => config,
    };
    let mut cfg = load_config(path, std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    match cli.command {
        Command::Solve { .. } => run_solve(&cfg, &out, cli.quiet),
        Command::Sweep { .. } => run_sweep(&cfg, &out, cli.quiet).map(|_| ()),
        Command::Verify { .. } => run_verify(&cfg, &out, cli.quiet).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

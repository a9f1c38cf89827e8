use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pancap::Allocation;
use pancap_cli::commands::{self, OutputFormat, Policy};
use pancap_cli::{CliError, GridSpec, Scenario};

#[derive(Parser)]
#[command(name = "pancap", version, about = "Capacity allocation for a hospital fluid network")]
struct Cli {
    /// Worker threads; PANCAP_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Optimal,
    Greedy,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal allocation for a one-period scenario.
    Solve {
        scenario: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Optimal allocation over a grid of total capacities.
    Sweep {
        scenario: PathBuf,
        /// start:stop:step
        #[arg(long)]
        grid: Option<GridSpec>,
        /// CSV destination; a .json sidecar is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-period plan over extreme-point chains.
    Plan {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        policy: PolicyArg,
        /// Emit every enumerated chain as CSV.
        #[arg(long)]
        full_table: bool,
        /// Destination of the full table.
        #[arg(long, requires = "full_table")]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Integrate the dynamics forward for a fixed allocation.
    Simulate {
        scenario: PathBuf,
        /// e1,e23,c,n
        #[arg(long, value_parser = commands::parse_alloc)]
        alloc: Allocation,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Trajectory dump (CSV).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn format_of(json: bool, csv: bool) -> OutputFormat {
    match (json, csv) {
        (true, _) => OutputFormat::Json,
        (_, true) => OutputFormat::Csv,
        _ => OutputFormat::Text,
    }
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("PANCAP_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Schema(format!("PANCAP_WORKERS: expected a positive integer, got {v:?}"))),
        Err(_) => Ok(flag.filter(|n| *n > 0)),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = workers(cli.workers)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(io::Error::other(e)))?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Solve {
            scenario,
            gamma,
            json,
            csv,
        } => commands::cmd_solve(&Scenario::load(&scenario)?, gamma, format_of(json, csv), &mut out)?,
        Command::Sweep { scenario, grid, out: dest } => {
            commands::cmd_sweep(&Scenario::load(&scenario)?, grid, dest.as_deref(), &mut out)?
        }
        Command::Plan {
            scenario,
            policy,
            full_table,
            out: dest,
            json,
            csv,
        } => {
            let policy = match policy {
                PolicyArg::Optimal => Policy::Optimal,
                PolicyArg::Greedy => Policy::Greedy,
                PolicyArg::Both => Policy::Both,
            };
            commands::cmd_plan(
                &Scenario::load(&scenario)?,
                policy,
                full_table,
                format_of(json, csv),
                dest.as_deref(),
                &mut out,
            )?
        }
        Command::Simulate {
            scenario,
            alloc,
            dt,
            horizon,
            trace,
        } => commands::cmd_simulate(&Scenario::load(&scenario)?, alloc, dt, horizon, trace.as_deref(), &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pancap: {e}");
            e.exit_code()
        }
    }
}

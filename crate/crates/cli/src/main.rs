use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use obstacle_mcf_cli::experiment::{audit, run_experiment, run_study};
use obstacle_mcf_cli::snapshot::{read_snapshot, to_csv};
use obstacle_mcf_cli::{load_config, CliError, CliResult, ExitStatus, OUTPUT_DIR_ENV};

/// Penalized mean curvature flow with obstacles: runs, audits, studies and exports.
#[derive(Parser)]
#[command(name = "obstacle-mcf", version, after_help = format!(
    "The output directory can be overridden with {OUTPUT_DIR_ENV}.\n\
     Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 numerical abort."
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every eps of the config and its checks.
    Run { config: PathBuf },
    /// Check that the configured data is well prepared.
    Audit { config: PathBuf },
    /// Sweep grid sizes and eps values and tabulate the results.
    Study { config: PathBuf },
    /// Convert a binary snapshot.
    Export {
        snapshot: PathBuf,
        /// Write CSV (dimension 1 or 2 only).
        #[arg(long)]
        csv: bool,
        /// Destination; defaults to the snapshot path with a `.csv` extension.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn execute(command: Command) -> CliResult<ExitStatus> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", outcome.summary());
            match outcome.first_failure() {
                None => Ok(ExitStatus::Pass),
                Some(c) => {
                    eprintln!("check failed: {} (eps={})", c.name, c.eps);
                    Ok(ExitStatus::CheckFailed)
                }
            }
        }
        Command::Audit { config } => {
            let cfg = load_config(&config)?;
            let report = audit(&cfg)?;
            println!("{report}");
            Ok(if report.pass { ExitStatus::Pass } else { ExitStatus::CheckFailed })
        }
        Command::Study { config } => {
            let cfg = load_config(&config)?;
            print!("{}", run_study(&cfg)?);
            Ok(ExitStatus::Pass)
        }
        Command::Export { snapshot, csv, out } => {
            if !csv {
                return Err(CliError::invalid("export", "choose an output format (--csv)"));
            }
            let (u, _) = read_snapshot(&snapshot)?;
            let dest = out.unwrap_or_else(|| snapshot.with_extension("csv"));
            write_csv(&dest, &to_csv(&u)?)?;
            Ok(ExitStatus::Pass)
        }
    }
}

fn write_csv(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = execute(cli.command).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.status()
    });
    ExitCode::from(status.code() as u8)
}

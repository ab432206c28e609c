mod commands;
mod error;
mod plot;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::plot::PlotKind;

/// Optimal output consensus simulator.
#[derive(Debug, Parser)]
#[command(name = "optcons", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print relative degrees, decoupling matrix, zero dynamics and graph checks.
    Analyze {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
    },
    /// Simulate a scenario and write its trajectory CSV.
    Run {
        scenario: String,
        /// Output directory (falls back to the scenario's `output.dir`).
        #[arg(long, env = "OPTCONS_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Rerun a scenario for several values of eps.
    SweepEps {
        scenario: String,
        /// Comma-separated eps values.
        #[arg(long, allow_hyphen_values = true)]
        eps: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a trajectory CSV as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Marker for phase plots, e.g. `2.5,1.1`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ystar: Option<Vec<f64>>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Analyze { scenario } => {
            let sf = commands::resolve_scenario(&scenario)?;
            commands::analyze(&sf, &mut out)
        }
        Command::Run { scenario, out: dir } => {
            let sf = commands::resolve_scenario(&scenario)?;
            commands::run(&sf, dir, &mut out).map(|_| ())
        }
        Command::SweepEps {
            scenario,
            eps,
            out: target,
        } => {
            let sf = commands::resolve_scenario(&scenario)?;
            let eps = commands::parse_eps_list(&eps)?;
            commands::sweep(&sf, &eps, target.as_deref(), &mut out, &mut io::stderr())
        }
        Command::Plot {
            csv,
            kind,
            out: target,
            ystar,
        } => commands::plot(&csv, kind, &target, ystar.as_deref(), &mut out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

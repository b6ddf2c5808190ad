use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;
mod scenario;
mod svg;

use commands::Options;

#[derive(Parser)]
#[command(
    name = "doslab",
    version,
    about = "Quantized control under denial-of-service attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the conditions, simulate, and write traces, report and plots.
    Run(CommonArgs),
    /// Print the condition report without simulating.
    Check(CommonArgs),
    /// Write the admissible attack-budget boundary.
    Tradeoff(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    scenario: PathBuf,
    /// Output directory (default `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the attack-pattern seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_plots: bool,
}

impl From<CommonArgs> for Options {
    fn from(a: CommonArgs) -> Self {
        Options {
            scenario: a.scenario,
            out: a.out,
            seed: a.seed,
            no_plots: a.no_plots,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(&a.into()),
        Command::Check(a) => commands::check(&a.into()),
        Command::Tradeoff(a) => commands::tradeoff(&a.into()),
    };
    match result {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("doslab: {e}");
            e.exit_code()
        }
    }
}

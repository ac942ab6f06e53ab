mod commands;
mod config;
mod error;
mod io;
mod oracle_suite;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "graphsel",
    version,
    about = "Graph-structured model selection with spike-and-slab Laplacian priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit at a single spike variance and write state.json.
    Fit(Overrides),
    /// Fit over the v0 grid and write path.csv.
    Path(Overrides),
    /// Fit the path, score the candidates and write selection.json, scores.csv and estimate.csv.
    Select(Overrides),
    /// Generate a simulation design with seeded noise.
    Simulate(Overrides),
    /// FDP, POW and MSE of an estimate against the truth.
    Metrics(Overrides),
    /// Compare library results with brute-force references and write oracle_reports.csv.
    Oracle(Overrides),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(o) => commands::cmd_fit(&o.resolve()?),
        Command::Path(o) => commands::cmd_path(&o.resolve()?),
        Command::Select(o) => commands::cmd_select(&o.resolve()?),
        Command::Simulate(o) => commands::cmd_simulate(&o.resolve()?),
        Command::Metrics(o) => commands::cmd_metrics(&o.resolve()?),
        Command::Oracle(o) => {
            let cfg = o.resolve()?;
            let reports = oracle_suite::run_suite(&cfg)?;
            std::fs::create_dir_all(&cfg.out)?;
            let file = std::fs::File::create(cfg.out_file("oracle_reports.csv"))?;
            graphsel_oracle::write_csv(file, &reports)?;
            let failed = reports.iter().filter(|r| !r.pass).count();
            println!("{} checks, {failed} failed", reports.len());
            if failed > 0 {
                return Err(CliError::Numeric(format!("{failed} oracle checks failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("graphsel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

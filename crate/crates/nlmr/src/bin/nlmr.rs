//! Thin command-line front end: `fit`, `simulate`, and `curve` read a TOML
//! config, write a JSON report plus CSV artifacts, and exit with 0 on
//! success or a class-specific nonzero code (2 config, 3 data, 4 numerical).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlmr::io::fmt_g17;
use nlmr::runner::{self, Command, GridSpec};

#[derive(Parser)]
#[command(name = "nlmr", version, about = "Nonlinear instrumental-variable estimation")]
struct Cli {
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the configured model to a CSV data set.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a Monte Carlo grid and write a summary table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: NLMR_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit the semiparametric model and tabulate the curve on a grid.
    Curve {
        #[arg(long)]
        config: PathBuf,
        /// Evaluation grid as lo:hi:steps.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
    },
}

fn workers_from_env() -> Result<Option<usize>, nlmr::Error> {
    match std::env::var("NLMR_WORKERS") {
        Ok(text) => text
            .parse::<usize>()
            .map(Some)
            .map_err(|_| nlmr::Error::ConfigInvalid {
                field: "NLMR_WORKERS".to_string(),
                reason: format!("`{text}` is not a positive integer"),
            }),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<runner::RunOutcome, nlmr::Error> {
    let (config, command) = match cli.command {
        Cmd::Fit { config } => (config, Command::Fit),
        Cmd::Simulate { config, workers } => {
            let workers = match workers {
                Some(w) => Some(w),
                None => workers_from_env()?,
            };
            (config, Command::Simulate { workers })
        }
        Cmd::Curve { config, grid } => (config, Command::Curve {
            grid: GridSpec::parse(&grid)?,
        }),
    };
    runner::run(&config, &command, cli.seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            let report = &outcome.report;
            if let Some(fit) = &report.fit {
                for &j in &fit.theta_index {
                    let c = &fit.coefficients[j];
                    println!("{}: {} (se {})", c.name, fmt_g17(c.estimate), fmt_g17(c.se));
                }
            }
            if let Some(spmr) = &report.spmr {
                println!("lambda: {}", fmt_g17(spmr.lambda));
                println!("edf_x: {}", fmt_g17(spmr.edf_x));
            }
            if let Some(test) = &report.test {
                println!("p_value: {}", fmt_g17(test.p_value));
            }
            if let Some(curve) = &report.curve_file {
                println!("curve: {curve}");
            }
            if let Some(summary) = &report.summary_file {
                println!("summary: {summary}");
            }
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            println!("report: {}", outcome.report_path.display());
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}

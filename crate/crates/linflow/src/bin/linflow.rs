//! Thin command-line front end over the library's experiment runner.
//!
//! Exit codes: 0 success, 2 config error, 3 divergence, 4 failed `--check`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use linflow::cli::{self, CriticalConfig, ExperimentConfig};
use linflow::Error;

#[derive(Parser)]
#[command(name = "linflow", version, about = "Gradient-flow experiments for deep linear networks")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Fail (exit 4) when the run misses its convergence thresholds.
        #[arg(long)]
        check: bool,
    },
    /// Enumerate and classify critical points into a CSV table.
    Critical {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized agreement check of the three metric evaluation routes.
    MetricCheck {
        /// Matrix dimensions as `d_y,d_x` (e.g. `5,4`).
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 4])]
        dims: Vec<usize>,
        /// Layer counts to test.
        #[arg(long, value_delimiter = ',', default_values_t = [2u32, 3, 5])]
        n: Vec<u32>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Json(_) => 2,
        Error::Divergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match dispatch(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(args: Args) -> Result<ExitCode, Error> {
    match args.command {
        Command::Simulate { config, check } => {
            let mut config = ExperimentConfig::from_path(&config)?;
            if check && config.check_dist_tol.is_none() {
                config.check_dist_tol = Some(1e-4);
            }
            let report = cli::run(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if check && report.check_passed == Some(false) {
                return Ok(ExitCode::from(4));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Critical { config } => {
            let config = CriticalConfig::from_path(&config)?;
            let table = cli::run_critical(&config)?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
        Command::MetricCheck { dims, n, trials, seed } => {
            if dims.len() != 2 {
                return Err(Error::Config("--dims needs exactly two values (d_y,d_x)".into()));
            }
            let report = cli::run_metric_check((dims[0], dims[1]), &n, trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

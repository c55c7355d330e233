//! `heterotl` command-line tool.
//!
//! Exit codes: 0 success, 1 output failure, 2 bad arguments, 3 data error,
//! 4 solver non-convergence.

mod commands;
mod error;
mod options;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "heterotl", version, about = "Heterogeneous transfer learning for linear regression with covariates missing from the target")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the two-stage estimator and save the model as JSON
    Fit(commands::FitArgs),
    /// Predict from a saved model
    Predict(commands::PredictArgs),
    /// Run simulation replications and write metrics
    Simulate(commands::SimulateArgs),
    /// Bootstrap the target stage with the proxy stage held fixed
    Bootstrap(commands::BootstrapArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Simulate(_) => "simulate",
            Command::Bootstrap(_) => "bootstrap",
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("HETEROTL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("HETEROTL_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    eprintln!("\n{}", sub.render_usage());
                    eprintln!("For more information, try 'heterotl {name} --help'.");
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}

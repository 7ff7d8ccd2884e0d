//! `sechyp`: batch driver for simulations, spectra, singularity
//! classification, hyperbolicity verdicts and measure statistics.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sechyp_core::Error;

/// Exit code for invalid configurations.
const EXIT_CONFIG: u8 = 2;
/// Exit code for runtime failures outside the verdict contract.
const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sechyp", version, about = "Finite-time hyperbolicity certificates for singular flows")]
struct Cli {
    /// JSON run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    /// Seed override.
    #[arg(long, global = true, env = "SECHYP_SEED")]
    seed: Option<u64>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate ensemble orbits and write orbit dumps.
    Simulate,
    /// Lyapunov spectrum of the first ensemble orbit.
    Spectrum,
    /// Classify the model's equilibria.
    Classify,
    /// Evaluate the requested conditions; exit 0 pass, 1 fail, 3 inconclusive.
    Verify,
    /// Birkhoff averages, invariant-measure statistics and basin sampling.
    Measure,
    /// Summarize an existing verify report as CSV and exit with its verdict code.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Config { .. }) => EXIT_CONFIG,
                _ if err.is::<commands::UsageError>() => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            };
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

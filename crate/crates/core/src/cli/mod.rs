//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid input (including usage errors),
//! 2 for numerical failure. Errors are printed on stderr prefixed by the
//! pipeline stage. `MFLQG_THREADS` caps the worker count.

mod artifacts;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use artifacts::{read_law, sha256_hex, StoredLaw, CONFIG_COPY, LAW_FILE, MANIFEST};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mflqg", version, about = "Mean-field decentralized control for linear-quadratic populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a configuration file and list every problem found.
    Validate { config: PathBuf },
    /// Evaluate the convexity criteria.
    Convexity {
        config: PathBuf,
        /// JSON matrix for ΔQ (default Q − Q̂).
        #[arg(long)]
        dq: Option<PathBuf>,
        /// JSON matrix for ΔG (default G − Ĝ).
        #[arg(long)]
        dg: Option<PathBuf>,
    },
    /// Solve for the decentralized law and its mean fields.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo simulation of N agents under a solved law.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        law: PathBuf,
        #[arg(long = "N")]
        population: usize,
        #[arg(long)]
        paths: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Keep every k-th node in the trajectory output.
        #[arg(long, default_value_t = 1)]
        thin: usize,
    },
    /// Decay of the state-average error with N.
    Converge {
        config: PathBuf,
        #[arg(long)]
        law: PathBuf,
        #[arg(long = "N-list", value_delimiter = ',', required = true)]
        populations: Vec<usize>,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-capita cost gap to the centralized optimum for small N.
    Gap {
        config: PathBuf,
        #[arg(long = "N-list", value_delimiter = ',', required = true)]
        populations: Vec<usize>,
        #[arg(long)]
        paths: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve, simulate N = 1000 and run the convergence study on the bundled
    /// two-dimensional instance.
    #[command(name = "repro-sec7")]
    ReproSec7 {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = commands::REPRO_SEED)]
        seed: u64,
        /// Replications per population in the convergence study.
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_INVALID;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_NUMERICAL;
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(code) => code,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_NUMERICAL
    }
}

/// `MFLQG_THREADS`, or 0 to let the pool pick the hardware parallelism.
fn thread_count() -> Result<usize, String> {
    match std::env::var("MFLQG_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("MFLQG_THREADS must be a non-negative integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

//! `metaimpact` command line.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration or usage, 3 data,
//! 4 a fit did not converge (outputs are still written).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metaimpact::{Error, ErrorKind};

use commands::{Invocation, Status};

#[derive(Parser)]
#[command(name = "metaimpact", version, about = "Metaorder impact, decay and kernel deconvolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and its ground truth into --out.
    Simulate(Flags),
    /// Impact curves, ratio, decay, flow autocorrelation and fits.
    Estimate(Flags),
    /// Same-day and next-day relaxation curves with exponent and plateau fits.
    Decay(Flags),
    /// Kernel regression, bootstrap bands, response function and asymptote fits.
    Deconvolve(Flags),
    /// Summarize reports from one or more output directories against ground truth.
    Report(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Panel directory (repeatable for `report`).
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Restrict the analysis to stocks of this tranche.
    #[arg(long)]
    tranche: Option<String>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 1,
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Convergence => 4,
    }
}

fn set_threads(n: Option<usize>) -> metaimpact::Result<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (run, flags): (fn(&Invocation) -> metaimpact::Result<Status>, Flags) = match cli.command {
        Command::Simulate(f) => (commands::simulate, f),
        Command::Estimate(f) => (commands::estimate, f),
        Command::Decay(f) => (commands::decay, f),
        Command::Deconvolve(f) => (commands::deconvolve_cmd, f),
        Command::Report(f) => (commands::report, f),
    };
    let inv = Invocation {
        config: flags.config,
        seed: flags.seed,
        out: flags.out,
        input: flags.input,
        force: flags.force,
        tranche: flags.tranche,
    };
    match set_threads(flags.threads).and_then(|_| run(&inv)) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::FitsFailed(names)) => {
            log::error!("outputs written, but these fits did not converge: {}", names.join(", "));
            ExitCode::from(exit_code(ErrorKind::Convergence))
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

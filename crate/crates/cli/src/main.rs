//! `qhet` — heterogeneity analysis for standardized-mean-difference
//! meta-analysis.
//!
//! Three subcommands: `analyze` a dataset of study summaries, `simulate`
//! the estimators over a parameter grid, and `plot` simulation results as
//! self-contained SVG figures.

mod analyze;
mod plot;
mod simulate;
mod svg;

use clap::{Parser, Subcommand};
use qhet_core::Error;

/// Writes to stdout, ignoring a closed pipe (`qhet ... | head` should not
/// panic mid-report).
pub(crate) fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// Wraps a CSV reading failure with the file name, keeping i/o problems
/// (missing file, permissions) distinct from malformed content so they exit
/// with different codes.
pub(crate) fn csv_err(path: &std::path::Path, e: csv::Error) -> Error {
    let text = format!("{}: {e}", path.display());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), text)),
        _ => Error::Validation(text),
    }
}

#[derive(Parser)]
#[command(
    name = "qhet",
    version,
    about = "Between-study heterogeneity for standardized-mean-difference meta-analysis",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate and test heterogeneity for one dataset of study summaries
    Analyze(analyze::AnalyzeArgs),
    /// Run a Monte Carlo grid over study counts, sizes, effects, and heterogeneity
    Simulate(simulate::SimulateArgs),
    /// Draw SVG figures from `simulate` output
    Plot(plot::PlotArgs),
}

/// Stable exit codes: 2 for rejected input, 3 for too few studies, 4 for a
/// requested slice or dataset that holds no data, 1 for anything else.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_)
        | Error::DegenerateStudy(_)
        | Error::Usage(_)
        | Error::Config(_) => 2,
        Error::TooFewStudies { .. } => 3,
        Error::NoData(_) => 4,
        _ => 1,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => analyze::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Plot(args) => plot::run(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

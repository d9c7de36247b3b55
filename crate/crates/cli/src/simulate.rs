//! The `simulate` subcommand: run a Monte Carlo grid, persist per-cell
//! results for resumption, and write the long-format CSV plus a manifest.

use std::fs;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Args;

use qhet_core::sim::{grid_to_rows, rows_to_csv, run_grid, SimConfig};
use qhet_core::{Error, Result};

/// Replications per cell when no configuration file is given.
const DEFAULT_REPS: u32 = 1000;

/// Run a simulation grid.
///
/// Without `--config` the built-in benchmark grid of 1800 cells is used.
/// Finished cells are persisted under `<out>/cells/`, so rerunning the same
/// command resumes instead of recomputing.  Seed precedence: `--seed`, then
/// the `QHET_SEED` environment variable, then the configuration file.
#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Simulation configuration (JSON); defaults to the benchmark grid
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for cells/, results.csv, and manifest.json
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed (overrides QHET_SEED and the configuration file)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications per cell (overrides the configuration file)
    #[arg(long)]
    pub reps: Option<u32>,
    /// Worker threads; 0 means one per logical CPU
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Discard persisted cells and recompute everything
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let mut config: SimConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SimConfig::table1(DEFAULT_REPS, 0),
    };
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    } else if let Ok(text) = std::env::var("QHET_SEED") {
        config.master_seed = text.trim().parse().map_err(|_| {
            Error::Config(format!("QHET_SEED must be an unsigned integer, got '{text}'"))
        })?;
    }
    config.validate()?;

    fs::create_dir_all(&args.out)?;
    let cells_dir = args.out.join("cells");
    if args.force && cells_dir.exists() {
        for entry in fs::read_dir(&cells_dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("cell_") && name.ends_with(".json") {
                fs::remove_file(&path)?;
            }
        }
    }

    let started = Instant::now();
    let outcome = run_grid(&config, args.jobs, Some(&cells_dir))?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let rows = grid_to_rows(&outcome.results);
    let csv_path = args.out.join("results.csv");
    fs::write(&csv_path, rows_to_csv(&rows))?;

    let manifest = serde_json::json!({
        "tool": "qhet",
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "wall_seconds": wall_seconds,
        "cells": outcome.results.len(),
        "computed": outcome.computed,
        "resumed": outcome.resumed,
        "rows": rows.len(),
        "results_csv": "results.csv",
        "config": config,
    });
    let manifest_path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("serialize manifest: {e}")))?;
    fs::write(&manifest_path, text + "\n")?;

    crate::emit(&format!(
        "{} cells ({} computed, {} resumed) in {:.1}s\n",
        outcome.results.len(),
        outcome.computed,
        outcome.resumed,
        wall_seconds
    ));
    crate::emit(&format!("wrote {}\n", csv_path.display()));
    crate::emit(&format!("wrote {}\n", manifest_path.display()));
    Ok(())
}

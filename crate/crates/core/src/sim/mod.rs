//! Monte Carlo evaluation of the estimators, intervals, and tests over a
//! parameter grid, with reproducible per-cell seeding, parallel execution,
//! and crash-safe resumption.

mod config;
mod result;
mod runner;

pub use config::{arm_split, cell_seed, CellParams, NSpec, SimConfig};
pub use result::{rows_to_csv, CellResult, IntervalAccum, MetricRow, PointAccum, TestAccum};
pub use runner::{grid_to_rows, run_cell, run_grid, GridRun};

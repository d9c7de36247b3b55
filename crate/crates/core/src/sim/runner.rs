//! Cell execution and grid orchestration.
//!
//! A cell's entire random stream comes from its parameter-derived seed, so
//! every cell is reproducible in isolation and the grid can be computed in
//! any order, on any number of threads, or across several invocations
//! (finished cells are persisted and reloaded) without changing a single
//! output bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::effects::{var_g_conditional, EffectEstimate, GSampler, VarianceMode};
use crate::error::{Error, Result};
use crate::htest;
use crate::intervals;
use crate::point;
use crate::qstat;

use super::config::{cell_seed, CellParams, SimConfig};
use super::result::{CellResult, IntervalAccum, MetricRow, PointAccum, TestAccum};

/// Outcome of a grid run: one result per cell, in grid order, plus how many
/// cells were computed here and how many were reloaded from a previous run.
#[derive(Clone, Debug)]
pub struct GridRun {
    pub results: Vec<CellResult>,
    pub computed: usize,
    pub resumed: usize,
}

/// Runs all replications of one cell.
///
/// Per replication: draw each study's true effect (a normal perturbation of
/// the common effect when `tau2 > 0`), draw the bias-corrected effect
/// estimates, then feed the meta-analysis to every configured estimator,
/// interval, and test.  Tests are evaluated through their p-value once and
/// tallied against every threshold.  Method-level failures (for example a
/// likelihood maximization that does not converge) are counted, not fatal.
pub fn run_cell(config: &SimConfig, cell: &CellParams) -> Result<CellResult> {
    let seed = cell_seed(config.master_seed, cell, config.reps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arms = cell.arms()?;
    let samplers: Vec<GSampler> = arms
        .iter()
        .map(|&(n_t, n_c)| {
            let m = f64::from(n_t + n_c) - 2.0;
            let n_tilde = f64::from(n_t) * f64::from(n_c) / f64::from(n_t + n_c);
            GSampler::new(m, n_tilde)
        })
        .collect();
    let tau = cell.tau2.sqrt();
    let thresholds = config.thresholds();

    let mut point_acc = vec![PointAccum::default(); config.point_methods.len()];
    let mut interval_acc = vec![IntervalAccum::default(); config.interval_methods.len()];
    let mut test_acc = vec![
        TestAccum { reject_counts: vec![0; thresholds.len()], failures: 0 };
        config.test_methods.len()
    ];
    let mut sum_q_f = 0.0;
    let mut sum_q_f_sq = 0.0;
    let mut sum_q_iv = 0.0;
    let mut sum_q_iv_sq = 0.0;

    let mut estimates: Vec<EffectEstimate> = Vec::with_capacity(arms.len());
    for _ in 0..config.reps {
        estimates.clear();
        for (sampler, &(n_t, n_c)) in samplers.iter().zip(&arms) {
            let delta_i = if cell.tau2 > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                cell.delta + tau * z
            } else {
                cell.delta
            };
            let g = sampler.sample(&mut rng, delta_i);
            estimates.push(EffectEstimate {
                g,
                v2: var_g_conditional(g, n_t, n_c),
                n_t,
                n_c,
            });
        }

        let q_f = qstat::q_f(&estimates)?.value;
        sum_q_f += q_f;
        sum_q_f_sq += q_f * q_f;
        let q_iv = qstat::q_iv(&estimates)?.value;
        sum_q_iv += q_iv;
        sum_q_iv_sq += q_iv * q_iv;

        for (&method, acc) in config.point_methods.iter().zip(&mut point_acc) {
            match point::estimate_tau2(&estimates, method) {
                Ok(est) => {
                    acc.sum += est.value;
                    acc.sum_sq += est.value * est.value;
                    acc.truncated += u32::from(est.truncated);
                }
                Err(_) => acc.failures += 1,
            }
        }
        for (&method, acc) in config.interval_methods.iter().zip(&mut interval_acc) {
            match intervals::interval(&estimates, method, config.interval_level) {
                Ok(ci) => {
                    acc.covered += u32::from(ci.contains(cell.tau2));
                    acc.degenerate += u32::from(ci.degenerate);
                    acc.sum_width += ci.width();
                }
                Err(_) => acc.failures += 1,
            }
        }
        for (&method, acc) in config.test_methods.iter().zip(&mut test_acc) {
            match htest::p_value(&estimates, method, VarianceMode::Conditional, 0.0) {
                Ok(p) => {
                    for (&threshold, count) in thresholds.iter().zip(&mut acc.reject_counts) {
                        *count += u32::from(p < threshold);
                    }
                }
                Err(_) => acc.failures += 1,
            }
        }
    }

    Ok(CellResult {
        cell: cell.clone(),
        reps: config.reps,
        seed,
        thresholds,
        sum_q_f,
        sum_q_f_sq,
        sum_q_iv,
        sum_q_iv_sq,
        point: config
            .point_methods
            .iter()
            .map(ToString::to_string)
            .zip(point_acc)
            .collect::<BTreeMap<_, _>>(),
        intervals: config
            .interval_methods
            .iter()
            .map(ToString::to_string)
            .zip(interval_acc)
            .collect::<BTreeMap<_, _>>(),
        tests: config
            .test_methods
            .iter()
            .map(ToString::to_string)
            .zip(test_acc)
            .collect::<BTreeMap<_, _>>(),
    })
}

fn cell_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("cell_{seed:016x}.json"))
}

/// Tries to reload a finished cell.  The stored parameters, replication
/// count, thresholds, and method sets must all match the requested
/// configuration; anything else (including unreadable or truncated files)
/// falls back to recomputation.
fn try_load(dir: &Path, seed: u64, config: &SimConfig, cell: &CellParams) -> Option<CellResult> {
    let path = cell_path(dir, seed);
    let text = std::fs::read_to_string(&path).ok()?;
    let stored: CellResult = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("ignoring unreadable cell file {}: {e}", path.display());
            return None;
        }
    };
    let labels_match = |stored: Vec<&String>, wanted: Vec<String>| {
        stored.into_iter().map(String::as_str).eq(wanted.iter().map(String::as_str))
    };
    let compatible = stored.cell == *cell
        && stored.reps == config.reps
        && stored.seed == seed
        && stored.thresholds == config.thresholds()
        && {
            let mut wanted: Vec<String> =
                config.point_methods.iter().map(ToString::to_string).collect();
            wanted.sort();
            labels_match(stored.point.keys().collect(), wanted)
        }
        && {
            let mut wanted: Vec<String> =
                config.interval_methods.iter().map(ToString::to_string).collect();
            wanted.sort();
            labels_match(stored.intervals.keys().collect(), wanted)
        }
        && {
            let mut wanted: Vec<String> =
                config.test_methods.iter().map(ToString::to_string).collect();
            wanted.sort();
            labels_match(stored.tests.keys().collect(), wanted)
        };
    if compatible {
        Some(stored)
    } else {
        log::warn!(
            "cell file {} does not match the requested configuration; recomputing",
            path.display()
        );
        None
    }
}

/// Writes a finished cell atomically (temporary file, then rename), so an
/// interrupted run never leaves a half-written cell behind.
fn persist(dir: &Path, result: &CellResult) -> Result<()> {
    let text = serde_json::to_string(result)
        .map_err(|e| Error::Config(format!("cannot serialize cell result: {e}")))?;
    let path = cell_path(dir, result.seed);
    let tmp = dir.join(format!("cell_{:016x}.json.tmp.{}", result.seed, std::process::id()));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

/// Runs the whole grid.
///
/// `jobs` caps the worker threads (0 means one per logical CPU).  With an
/// output directory, each finished cell is persisted immediately and
/// matching cells from earlier runs are reloaded instead of recomputed, so
/// an interrupted grid resumes where it stopped.  Results come back in grid
/// order whatever the execution order was.
pub fn run_grid(config: &SimConfig, jobs: usize, out_dir: Option<&Path>) -> Result<GridRun> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let cells = config.cells();
    let computed = AtomicUsize::new(0);
    let resumed = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Result<Vec<CellResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let seed = cell_seed(config.master_seed, cell, config.reps);
                if let Some(dir) = out_dir {
                    if let Some(stored) = try_load(dir, seed, config, cell) {
                        resumed.fetch_add(1, Ordering::Relaxed);
                        return Ok(stored);
                    }
                }
                let result = run_cell(config, cell)?;
                computed.fetch_add(1, Ordering::Relaxed);
                if let Some(dir) = out_dir {
                    persist(dir, &result)?;
                }
                Ok(result)
            })
            .collect()
    });
    Ok(GridRun {
        results: results?,
        computed: computed.load(Ordering::Relaxed),
        resumed: resumed.load(Ordering::Relaxed),
    })
}

/// Flattens grid results (in their given order) into metric rows.
pub fn grid_to_rows(results: &[CellResult]) -> Vec<MetricRow> {
    results.iter().flat_map(CellResult::to_rows).collect()
}

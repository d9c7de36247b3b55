//! Simulation grid description and deterministic per-cell seeding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::htest::ApproxMethod;
use crate::intervals::IntervalMethod;
use crate::point::Tau2Method;

/// Per-study total sample sizes for one cell: either every study the same
/// size, or a repeating pattern (the number of studies must be a multiple of
/// the pattern length).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NSpec {
    Equal(u32),
    Unequal(Vec<u32>),
}

impl NSpec {
    /// The per-study sizes for `k` studies.
    pub fn expand(&self, k: u32) -> Result<Vec<u32>> {
        match self {
            NSpec::Equal(n) => Ok(vec![*n; k as usize]),
            NSpec::Unequal(pattern) => {
                if pattern.is_empty() {
                    return Err(Error::Config("empty study-size pattern".into()));
                }
                if k as usize % pattern.len() != 0 {
                    return Err(Error::Config(format!(
                        "{k} studies cannot be filled by a pattern of length {}",
                        pattern.len()
                    )));
                }
                Ok(pattern.iter().copied().cycle().take(k as usize).collect())
            }
        }
    }

    fn sizes(&self) -> &[u32] {
        match self {
            NSpec::Equal(n) => std::slice::from_ref(n),
            NSpec::Unequal(pattern) => pattern,
        }
    }
}

impl fmt::Display for NSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NSpec::Equal(n) => write!(f, "{n}"),
            NSpec::Unequal(pattern) => {
                for (i, n) in pattern.iter().enumerate() {
                    if i > 0 {
                        write!(f, "/")?;
                    }
                    write!(f, "{n}")?;
                }
                Ok(())
            }
        }
    }
}

/// One point of the simulation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub k: u32,
    pub n_spec: NSpec,
    /// Fraction of each study allocated to the control arm.
    pub control_fraction: f64,
    /// True common effect.
    pub delta: f64,
    /// True between-study variance.
    pub tau2: f64,
}

impl CellParams {
    /// Treatment/control arm sizes for each study: the control arm gets
    /// `round(f * n)`, and both arms must end up with at least two subjects.
    pub fn arms(&self) -> Result<Vec<(u32, u32)>> {
        self.n_spec
            .expand(self.k)?
            .into_iter()
            .map(|n| arm_split(n, self.control_fraction))
            .collect()
    }
}

/// Splits a study of `n` subjects into `(treatment, control)` arms.
pub fn arm_split(n: u32, control_fraction: f64) -> Result<(u32, u32)> {
    let n_c = (control_fraction * f64::from(n)).round() as i64;
    if n_c < 2 || n_c > i64::from(n) - 2 {
        return Err(Error::Config(format!(
            "control fraction {control_fraction} leaves an arm of a study of {n} below 2 subjects"
        )));
    }
    Ok((n - n_c as u32, n_c as u32))
}

fn default_point_methods() -> Vec<Tau2Method> {
    Tau2Method::ALL.to_vec()
}

fn default_interval_methods() -> Vec<IntervalMethod> {
    IntervalMethod::ALL.to_vec()
}

fn default_test_methods() -> Vec<ApproxMethod> {
    vec![ApproxMethod::Fsw, ApproxMethod::M2sw, ApproxMethod::Chi2, ApproxMethod::Kdb]
}

fn default_p_grid() -> Vec<f64> {
    vec![
        0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975, 0.99,
        0.995, 0.9975, 0.999,
    ]
}

fn default_alpha_grid() -> Vec<f64> {
    vec![0.001, 0.005, 0.01, 0.05]
}

fn default_level() -> f64 {
    0.95
}

/// Full description of a simulation study: the parameter grid, the methods
/// to evaluate, the per-cell replication count, and the master seed from
/// which every cell derives its own reproducible stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k_values: Vec<u32>,
    pub n_specs: Vec<NSpec>,
    pub control_fractions: Vec<f64>,
    pub delta_values: Vec<f64>,
    pub tau2_values: Vec<f64>,
    pub reps: u32,
    pub master_seed: u64,
    #[serde(default = "default_point_methods")]
    pub point_methods: Vec<Tau2Method>,
    #[serde(default = "default_interval_methods")]
    pub interval_methods: Vec<IntervalMethod>,
    /// Tests of zero heterogeneity evaluated each replication.
    #[serde(default = "default_test_methods")]
    pub test_methods: Vec<ApproxMethod>,
    /// Rejection thresholds at which the empirical null CDF of each test is
    /// tallied (sizes follow directly; tail accuracy comes from the extreme
    /// entries).
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    /// Conventional significance levels, folded into the same tally.
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_level")]
    pub interval_level: f64,
}

impl SimConfig {
    /// The benchmark grid: three meta-analysis sizes, six equal and four
    /// unequal study-size patterns, two allocation fractions, five effects,
    /// and six heterogeneity values — 1800 cells.
    pub fn table1(reps: u32, master_seed: u64) -> SimConfig {
        SimConfig {
            k_values: vec![5, 10, 30],
            n_specs: vec![
                NSpec::Equal(20),
                NSpec::Equal(40),
                NSpec::Equal(100),
                NSpec::Equal(250),
                NSpec::Equal(640),
                NSpec::Equal(1000),
                NSpec::Unequal(vec![12, 16, 18, 20, 84]),
                NSpec::Unequal(vec![24, 32, 36, 40, 168]),
                NSpec::Unequal(vec![64, 72, 76, 80, 208]),
                NSpec::Unequal(vec![124, 132, 136, 140, 268]),
            ],
            control_fractions: vec![0.5, 0.75],
            delta_values: vec![0.0, 0.2, 0.5, 1.0, 2.0],
            tau2_values: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
            reps,
            master_seed,
            point_methods: default_point_methods(),
            interval_methods: default_interval_methods(),
            test_methods: default_test_methods(),
            p_grid: default_p_grid(),
            alpha_grid: default_alpha_grid(),
            interval_level: default_level(),
        }
    }

    /// All rejection thresholds, sorted and deduplicated.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.p_grid.iter().chain(&self.alpha_grid).copied().collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Checks the whole configuration; every cell of an accepted
    /// configuration is guaranteed to be runnable.
    pub fn validate(&self) -> Result<()> {
        fn unique<T: PartialEq + fmt::Display>(what: &str, xs: &[T]) -> Result<()> {
            for (i, a) in xs.iter().enumerate() {
                if xs[i + 1..].contains(a) {
                    return Err(Error::Config(format!("duplicate {what} '{a}'")));
                }
            }
            Ok(())
        }
        if self.k_values.is_empty() {
            return Err(Error::Config("no study counts given".into()));
        }
        for &k in &self.k_values {
            if k < 2 {
                return Err(Error::Config(format!("a meta-analysis needs at least 2 studies, got {k}")));
            }
        }
        if self.n_specs.is_empty() {
            return Err(Error::Config("no study sizes given".into()));
        }
        for spec in &self.n_specs {
            for &n in spec.sizes() {
                if n < 4 {
                    return Err(Error::Config(format!(
                        "study size {n} cannot hold two arms of at least 2 subjects"
                    )));
                }
            }
            for &k in &self.k_values {
                spec.expand(k)?;
            }
        }
        if self.control_fractions.is_empty() {
            return Err(Error::Config("no allocation fractions given".into()));
        }
        for &f in &self.control_fractions {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "allocation fraction must lie strictly between 0 and 1, got {f}"
                )));
            }
            for spec in &self.n_specs {
                for &n in spec.sizes() {
                    arm_split(n, f)?;
                }
            }
        }
        if self.delta_values.is_empty() {
            return Err(Error::Config("no effect values given".into()));
        }
        for &d in &self.delta_values {
            if !d.is_finite() {
                return Err(Error::Config(format!("effect value must be finite, got {d}")));
            }
        }
        if self.tau2_values.is_empty() {
            return Err(Error::Config("no heterogeneity values given".into()));
        }
        for &t in &self.tau2_values {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "heterogeneity must be finite and nonnegative, got {t}"
                )));
            }
        }
        if self.reps < 100 {
            return Err(Error::Config(format!(
                "at least 100 replications per cell are required for stable summaries, got {}",
                self.reps
            )));
        }
        for grid in [&self.p_grid, &self.alpha_grid] {
            for &p in grid {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Config(format!(
                        "threshold must lie strictly between 0 and 1, got {p}"
                    )));
                }
            }
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(Error::Config(format!(
                "interval level must lie strictly between 0 and 1, got {}",
                self.interval_level
            )));
        }
        unique("study count", &self.k_values)?;
        unique("study-size specification", &self.n_specs)?;
        unique("allocation fraction", &self.control_fractions)?;
        unique("effect value", &self.delta_values)?;
        unique("heterogeneity value", &self.tau2_values)?;
        unique("estimator", &self.point_methods)?;
        unique("interval method", &self.interval_methods)?;
        unique("test method", &self.test_methods)?;
        Ok(())
    }

    /// Enumerates the grid in a fixed order: study count, then sizes, then
    /// allocation, then effect, then heterogeneity.
    pub fn cells(&self) -> Vec<CellParams> {
        let mut out = Vec::new();
        for &k in &self.k_values {
            for n_spec in &self.n_specs {
                for &control_fraction in &self.control_fractions {
                    for &delta in &self.delta_values {
                        for &tau2 in &self.tau2_values {
                            out.push(CellParams {
                                k,
                                n_spec: n_spec.clone(),
                                control_fraction,
                                delta,
                                tau2,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The seed for one cell's random stream, mixed from the master seed and the
/// cell's parameters (not its position in the grid), so adding or removing
/// other cells never changes the draws of an existing one.
pub fn cell_seed(master_seed: u64, cell: &CellParams, reps: u32) -> u64 {
    let mut h = splitmix64(master_seed);
    let mut feed = |v: u64| h = splitmix64(h ^ v);
    feed(u64::from(cell.k));
    match &cell.n_spec {
        NSpec::Equal(n) => {
            feed(1);
            feed(u64::from(*n));
        }
        NSpec::Unequal(pattern) => {
            feed(2);
            feed(pattern.len() as u64);
            for &n in pattern {
                feed(u64::from(n));
            }
        }
    }
    feed(cell.control_fraction.to_bits());
    feed(cell.delta.to_bits());
    feed(cell.tau2.to_bits());
    feed(u64::from(reps));
    h
}

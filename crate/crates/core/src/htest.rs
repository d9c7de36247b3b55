//! Significance tests for between-study heterogeneity.
//!
//! Each test compares an observed Q statistic to an approximation of its
//! distribution under the null `tau2 = tau0_sq` and rejects for large
//! values. The constant-weight statistic pairs with its exact mixture
//! distribution (`FSW`) or a cheap two-moment gamma match (`M2SW`); the
//! inverse-variance statistic pairs with the classical chi-square reference
//! (`CHI2`), a small-sample corrected chi-square (`KDB`), or the
//! fixed-weight mixture (`BJ`).
//!
//! `CHI2` and `KDB` only describe the zero-heterogeneity null; asking them
//! to test a positive null is a usage error rather than a silent wrong
//! answer. The other three accept any nonnegative null value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::effects::{EffectEstimate, VarianceMode};
use crate::error::{Error, Result};
use crate::qstat::{self, WeightScheme};
use crate::quadform::{self, DEFAULT_EPS};

/// Null-distribution approximations for the heterogeneity tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ApproxMethod {
    /// Constant-weight statistic against its exact mixture distribution.
    Fsw,
    /// Constant-weight statistic against a two-moment gamma match.
    M2sw,
    /// Inverse-variance statistic against chi-square `K - 1`.
    Chi2,
    /// Inverse-variance statistic against chi-square with corrected df.
    Kdb,
    /// Inverse-variance statistic against its fixed-weight mixture.
    Bj,
}

impl ApproxMethod {
    pub const ALL: [ApproxMethod; 5] = [
        ApproxMethod::Fsw,
        ApproxMethod::M2sw,
        ApproxMethod::Chi2,
        ApproxMethod::Kdb,
        ApproxMethod::Bj,
    ];

    /// Whether the approximation can describe a null with positive
    /// heterogeneity.
    pub fn supports_positive_null(self) -> bool {
        matches!(self, ApproxMethod::Fsw | ApproxMethod::M2sw | ApproxMethod::Bj)
    }

    /// Which statistic the approximation refers to.
    pub fn weight_scheme(self) -> WeightScheme {
        match self {
            ApproxMethod::Fsw | ApproxMethod::M2sw => WeightScheme::EffectiveSampleSize,
            ApproxMethod::Chi2 | ApproxMethod::Kdb | ApproxMethod::Bj => {
                WeightScheme::InverseVariance
            }
        }
    }
}

impl fmt::Display for ApproxMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ApproxMethod::Fsw => "FSW",
            ApproxMethod::M2sw => "M2SW",
            ApproxMethod::Chi2 => "CHI2",
            ApproxMethod::Kdb => "KDB",
            ApproxMethod::Bj => "BJ",
        };
        f.write_str(s)
    }
}

impl FromStr for ApproxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FSW" => Ok(ApproxMethod::Fsw),
            "M2SW" => Ok(ApproxMethod::M2sw),
            "CHI2" => Ok(ApproxMethod::Chi2),
            "KDB" => Ok(ApproxMethod::Kdb),
            "BJ" => Ok(ApproxMethod::Bj),
            other => Err(Error::Usage(format!(
                "unknown test method '{other}' (expected one of FSW, M2SW, CHI2, KDB, BJ)"
            ))),
        }
    }
}

/// Outcome of a heterogeneity test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// The observed Q statistic the test was based on.
    pub statistic: f64,
    pub p_value: f64,
    /// `p_value < alpha`.
    pub reject: bool,
    pub method: ApproxMethod,
    pub alpha: f64,
    /// The null heterogeneity tested against.
    pub tau0_sq: f64,
}

/// The approximate null CDF behind `method`, evaluated at `x`. This is the
/// exact function the tests and the simulation counters share, so size and
/// CDF-accuracy studies measure the same object the tests use.
pub fn null_cdf(
    estimates: &[EffectEstimate],
    method: ApproxMethod,
    mode: VarianceMode,
    tau0_sq: f64,
    x: f64,
) -> Result<f64> {
    if !(tau0_sq >= 0.0 && tau0_sq.is_finite()) {
        return Err(Error::Validation(format!(
            "null heterogeneity must be finite and nonnegative, got {tau0_sq}"
        )));
    }
    if tau0_sq > 0.0 && !method.supports_positive_null() {
        return Err(Error::Usage(format!(
            "{method} only approximates the null at zero heterogeneity; use FSW, M2SW, or BJ \
             for a positive null"
        )));
    }
    match method {
        ApproxMethod::Fsw => quadform::ess_mixture_cdf(estimates, tau0_sq, mode, x, DEFAULT_EPS),
        ApproxMethod::M2sw => {
            let w = qstat::weights(estimates, WeightScheme::EffectiveSampleSize)?;
            let sigma2 = ess_sigma2(estimates, mode, tau0_sq)?;
            let (mean, var) = quadform::q_moments(&w, &sigma2, tau0_sq);
            quadform::gamma_two_moment_cdf(mean, var, x)
        }
        ApproxMethod::Chi2 => quadform::chi_square_null_cdf(estimates.len(), x),
        ApproxMethod::Kdb => quadform::corrected_df_cdf(estimates, x),
        ApproxMethod::Bj => quadform::iv_mixture_cdf(estimates, tau0_sq, x, DEFAULT_EPS),
    }
}

fn ess_sigma2(
    estimates: &[EffectEstimate],
    mode: VarianceMode,
    tau0_sq: f64,
) -> Result<Vec<f64>> {
    match mode {
        VarianceMode::Conditional => Ok(estimates.iter().map(|e| e.v2).collect()),
        VarianceMode::Unconditional => {
            quadform::check_unconditional_df(estimates)?;
            let delta_hat = qstat::ess_weighted_mean(estimates);
            Ok(estimates
                .iter()
                .map(|e| {
                    crate::effects::var_g_unconditional(delta_hat, tau0_sq, e.df(), e.n_tilde())
                })
                .collect())
        }
    }
}

/// The p-value of the observed statistic under `method`'s null
/// approximation: one minus the approximate CDF at the observed Q.
pub fn p_value(
    estimates: &[EffectEstimate],
    method: ApproxMethod,
    mode: VarianceMode,
    tau0_sq: f64,
) -> Result<f64> {
    let q = qstat::q_with_scheme(estimates, method.weight_scheme())?.value;
    Ok((1.0 - null_cdf(estimates, method, mode, tau0_sq, q)?).clamp(0.0, 1.0))
}

/// Tests the null `tau2 = tau0_sq` against the alternative `tau2 > tau0_sq`
/// at significance level `alpha`.
pub fn test_heterogeneity(
    estimates: &[EffectEstimate],
    method: ApproxMethod,
    mode: VarianceMode,
    tau0_sq: f64,
    alpha: f64,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Usage(format!(
            "significance level must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    let statistic = qstat::q_with_scheme(estimates, method.weight_scheme())?.value;
    let p = (1.0 - null_cdf(estimates, method, mode, tau0_sq, statistic)?).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic,
        p_value: p,
        reject: p < alpha,
        method,
        alpha,
        tau0_sq,
    })
}

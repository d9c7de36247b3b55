//! Confidence intervals for the between-study variance.
//!
//! Five constructions:
//!
//! * `QP` — inverts the generalized Q statistic against chi-square quantiles
//!   with `K - 1` degrees of freedom;
//! * `KDB` — the same inversion against the small-sample corrected degrees
//!   of freedom;
//! * `PL` — profile restricted likelihood, cut at half the chi-square(1)
//!   critical value below the maximum;
//! * `FPC` / `FPU` — invert the exact finite-sample distribution of the
//!   constant-weight statistic (conditional or unconditional sampling
//!   variances), keeping every `tau2` at which the observed statistic is not
//!   in either tail.
//!
//! All lower bounds truncate at zero. When the data sit in the lower tail
//! even at `tau2 = 0`, the inversion set is empty and the interval is
//! reported as degenerate `[0, 0]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::effects::{EffectEstimate, VarianceMode};
use crate::error::{Error, Result};
use crate::point;
use crate::qstat;
use crate::quadform::{self, DEFAULT_EPS};
use crate::solve;

const TAU2_TOL: f64 = 1e-6;

/// The interval constructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum IntervalMethod {
    /// Generalized-Q inversion against chi-square `K - 1` quantiles.
    Qp,
    /// Profile restricted likelihood.
    Pl,
    /// Generalized-Q inversion against corrected-df chi-square quantiles.
    Kdb,
    /// Exact constant-weight inversion, conditional variances.
    Fpc,
    /// Exact constant-weight inversion, unconditional variances.
    Fpu,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 5] = [
        IntervalMethod::Qp,
        IntervalMethod::Pl,
        IntervalMethod::Kdb,
        IntervalMethod::Fpc,
        IntervalMethod::Fpu,
    ];
}

impl fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IntervalMethod::Qp => "QP",
            IntervalMethod::Pl => "PL",
            IntervalMethod::Kdb => "KDB",
            IntervalMethod::Fpc => "FPC",
            IntervalMethod::Fpu => "FPU",
        };
        f.write_str(s)
    }
}

impl FromStr for IntervalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QP" => Ok(IntervalMethod::Qp),
            "PL" => Ok(IntervalMethod::Pl),
            "KDB" => Ok(IntervalMethod::Kdb),
            "FPC" => Ok(IntervalMethod::Fpc),
            "FPU" => Ok(IntervalMethod::Fpu),
            other => Err(Error::Usage(format!(
                "unknown interval method '{other}' (expected one of QP, PL, KDB, FPC, FPU)"
            ))),
        }
    }
}

/// A two-sided confidence interval for the between-study variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tau2Interval {
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
    /// Nominal coverage, e.g. `0.95`.
    pub level: f64,
    /// Whether the upper endpoint was cut off by a search cap rather than
    /// solved. The bracket grows geometrically until the sign flips, so this
    /// stays false unless the objective never crosses; it is kept in the
    /// result so downstream consumers can trust the endpoint semantics.
    pub at_upper_bound: bool,
    /// The inversion set was empty (data in the lower tail even at zero);
    /// `lower` and `upper` are both zero and the interval contains nothing.
    pub degenerate: bool,
}

impl Tau2Interval {
    /// Whether the interval contains `tau2`; a degenerate interval contains
    /// nothing.
    pub fn contains(&self, tau2: f64) -> bool {
        !self.degenerate && self.lower <= tau2 && tau2 <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Computes the interval selected by `method` at the given confidence level.
pub fn interval(
    estimates: &[EffectEstimate],
    method: IntervalMethod,
    level: f64,
) -> Result<Tau2Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage(format!(
            "confidence level must lie strictly between 0 and 1, got {level}"
        )));
    }
    match method {
        IntervalMethod::Qp => {
            let df = estimates.len() as f64 - 1.0;
            qstat::check_k(estimates.len())?;
            generalized_q_interval(estimates, df, IntervalMethod::Qp, level)
        }
        IntervalMethod::Kdb => {
            let df = quadform::corrected_null_df(estimates)?;
            generalized_q_interval(estimates, df, IntervalMethod::Kdb, level)
        }
        IntervalMethod::Pl => profile_likelihood_interval(estimates, level),
        IntervalMethod::Fpc => exact_inversion_interval(estimates, VarianceMode::Conditional, level),
        IntervalMethod::Fpu => {
            exact_inversion_interval(estimates, VarianceMode::Unconditional, level)
        }
    }
}

fn chi2_quantile(df: f64, p: f64) -> Result<f64> {
    let dist = ChiSquared::new(df)
        .map_err(|e| Error::Numeric(format!("chi-square with df {df}: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

/// Inverts the nonincreasing generalized Q against the `alpha/2` and
/// `1 - alpha/2` quantiles of a chi-square with `df` degrees of freedom.
fn generalized_q_interval(
    estimates: &[EffectEstimate],
    df: f64,
    method: IntervalMethod,
    level: f64,
) -> Result<Tau2Interval> {
    let alpha = 1.0 - level;
    let q_hi = chi2_quantile(df, 1.0 - alpha / 2.0)?;
    let q_lo = chi2_quantile(df, alpha / 2.0)?;
    let q0 = qstat::q_generalized(estimates, 0.0);
    let bound = point::tau2_upper_bound(estimates);

    if q0 <= q_lo {
        return Ok(Tau2Interval {
            lower: 0.0,
            upper: 0.0,
            method,
            level,
            at_upper_bound: false,
            degenerate: q0 < q_lo,
        });
    }
    let lower = if q0 <= q_hi {
        0.0
    } else {
        solve::solve_decreasing(
            |t| Ok(qstat::q_generalized(estimates, t) - q_hi),
            q0 - q_hi,
            bound,
            TAU2_TOL,
        )?
    };
    let upper = solve::solve_decreasing(
        |t| Ok(qstat::q_generalized(estimates, t) - q_lo),
        q0 - q_lo,
        bound,
        TAU2_TOL,
    )?;
    Ok(Tau2Interval {
        lower,
        upper,
        method,
        level,
        at_upper_bound: false,
        degenerate: false,
    })
}

/// Profile restricted-likelihood interval: every `tau2` whose restricted
/// log-likelihood is within half the chi-square(1) critical value of the
/// maximum.
fn profile_likelihood_interval(estimates: &[EffectEstimate], level: f64) -> Result<Tau2Interval> {
    let reml = point::tau2_reml(estimates)?;
    let t_hat = reml.value;
    let l_max = point::restricted_loglik(estimates, t_hat)?;
    let crit = chi2_quantile(1.0, level)? / 2.0;
    let threshold = l_max - crit;

    let deficit = |t: f64| Ok(point::restricted_loglik(estimates, t)? - threshold);
    let at_zero = deficit(0.0)?;
    let lower = if at_zero >= 0.0 {
        0.0
    } else {
        // The likelihood rises through the threshold somewhere below the
        // maximizer.
        solve::bisect(
            |t| Ok(-(point::restricted_loglik(estimates, t)? - threshold)),
            0.0,
            t_hat,
            -at_zero,
            -deficit(t_hat)?,
            TAU2_TOL,
        )?
    };
    let start = point::tau2_upper_bound(estimates).max(2.0 * t_hat);
    let upper_obj = |t: f64| deficit(t_hat + t);
    let upper_offset = solve::solve_decreasing(upper_obj, deficit(t_hat)?, start, TAU2_TOL)?;
    Ok(Tau2Interval {
        lower,
        upper: t_hat + upper_offset,
        method: IntervalMethod::Pl,
        level,
        at_upper_bound: false,
        degenerate: false,
    })
}

/// Exact inversion of the constant-weight statistic: the set of `tau2` at
/// which the observed value is neither in the lower nor the upper
/// `alpha/2` tail of its finite-sample distribution.
fn exact_inversion_interval(
    estimates: &[EffectEstimate],
    mode: VarianceMode,
    level: f64,
) -> Result<Tau2Interval> {
    let method = match mode {
        VarianceMode::Conditional => IntervalMethod::Fpc,
        VarianceMode::Unconditional => IntervalMethod::Fpu,
    };
    if mode == VarianceMode::Unconditional {
        quadform::check_unconditional_df(estimates)?;
    }
    let q = qstat::q_f(estimates)?.value;
    let alpha = 1.0 - level;
    let cdf = |t: f64| quadform::ess_mixture_cdf(estimates, t, mode, q, DEFAULT_EPS);
    let f0 = cdf(0.0)?;
    if f0 <= alpha / 2.0 {
        return Ok(Tau2Interval {
            lower: 0.0,
            upper: 0.0,
            method,
            level,
            at_upper_bound: false,
            degenerate: f0 < alpha / 2.0,
        });
    }
    let bound = point::tau2_upper_bound(estimates);
    let lower = if f0 <= 1.0 - alpha / 2.0 {
        0.0
    } else {
        solve::solve_decreasing(
            |t| Ok(cdf(t)? - (1.0 - alpha / 2.0)),
            f0 - (1.0 - alpha / 2.0),
            bound,
            TAU2_TOL,
        )?
    };
    let upper = solve::solve_decreasing(
        |t| Ok(cdf(t)? - alpha / 2.0),
        f0 - alpha / 2.0,
        bound,
        TAU2_TOL,
    )?;
    Ok(Tau2Interval {
        lower,
        upper,
        method,
        level,
        at_upper_bound: false,
        degenerate: false,
    })
}

//! Point estimators of the between-study variance.
//!
//! Eight estimators share one interface. Four are built on the
//! constant-weight statistic (weights fixed at the effective sample sizes):
//!
//! * `SSC` / `SSU` — moment estimators that equate the observed statistic to
//!   its expectation, with conditional or unconditional sampling variances;
//! * `SMC` / `SMU` — median estimators that pick the heterogeneity at which
//!   the observed statistic sits exactly at the median of its distribution,
//!   again in a conditional and an unconditional flavour.
//!
//! Four are classical inverse-variance-weighted references: the moment
//! estimator `DL`, restricted maximum likelihood `REML`, the generalized-Q
//! root `MP`, and `KDB`, which solves the generalized Q against a
//! small-sample corrected degrees of freedom instead of `K - 1`.
//!
//! All estimators truncate at zero and report whether truncation happened.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::effects::{EffectEstimate, VarianceMode};
use crate::error::{Error, Result};
use crate::qstat::{self, WeightScheme};
use crate::quadform::{self, DEFAULT_EPS};
use crate::solve;

/// Absolute tolerance for root-finding on the tau2 axis.
const TAU2_TOL: f64 = 1e-6;

/// Relative tolerance for the likelihood fixed point.
const REML_REL_TOL: f64 = 1e-8;
const REML_MAX_ITER: u32 = 1000;

/// The point estimators of the between-study variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tau2Method {
    /// Moment estimator on the constant-weight statistic, conditional
    /// sampling variances.
    Ssc,
    /// Moment estimator on the constant-weight statistic, unconditional
    /// sampling variances (one refinement pass from the conditional start).
    Ssu,
    /// Median estimator on the constant-weight statistic, conditional.
    Smc,
    /// Median estimator on the constant-weight statistic, unconditional.
    Smu,
    /// Inverse-variance moment estimator.
    Dl,
    /// Restricted maximum likelihood.
    Reml,
    /// Root of the generalized Q at `K - 1`.
    Mp,
    /// Root of the generalized Q at the corrected null mean.
    Kdb,
}

impl Tau2Method {
    pub const ALL: [Tau2Method; 8] = [
        Tau2Method::Ssc,
        Tau2Method::Ssu,
        Tau2Method::Smc,
        Tau2Method::Smu,
        Tau2Method::Dl,
        Tau2Method::Reml,
        Tau2Method::Mp,
        Tau2Method::Kdb,
    ];
}

impl fmt::Display for Tau2Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tau2Method::Ssc => "SSC",
            Tau2Method::Ssu => "SSU",
            Tau2Method::Smc => "SMC",
            Tau2Method::Smu => "SMU",
            Tau2Method::Dl => "DL",
            Tau2Method::Reml => "REML",
            Tau2Method::Mp => "MP",
            Tau2Method::Kdb => "KDB",
        };
        f.write_str(s)
    }
}

impl FromStr for Tau2Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SSC" => Ok(Tau2Method::Ssc),
            "SSU" => Ok(Tau2Method::Ssu),
            "SMC" => Ok(Tau2Method::Smc),
            "SMU" => Ok(Tau2Method::Smu),
            "DL" => Ok(Tau2Method::Dl),
            "REML" => Ok(Tau2Method::Reml),
            "MP" => Ok(Tau2Method::Mp),
            "KDB" => Ok(Tau2Method::Kdb),
            other => Err(Error::Usage(format!(
                "unknown estimator '{other}' (expected one of SSC, SSU, SMC, SMU, DL, REML, MP, KDB)"
            ))),
        }
    }
}

/// A point estimate of the between-study variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tau2Estimate {
    /// The estimate, always nonnegative.
    pub value: f64,
    pub method: Tau2Method,
    /// Whether the unconstrained solution was negative (or no positive root
    /// existed) and the estimate was clipped to zero.
    pub truncated: bool,
    /// Solver effort: objective evaluations for root-finding methods, passes
    /// for fixed-point methods, zero for closed forms.
    pub iterations: u32,
}

/// Dispatches to the estimator selected by `method`.
pub fn estimate_tau2(estimates: &[EffectEstimate], method: Tau2Method) -> Result<Tau2Estimate> {
    match method {
        Tau2Method::Ssc => tau2_moment(estimates, VarianceMode::Conditional),
        Tau2Method::Ssu => tau2_moment(estimates, VarianceMode::Unconditional),
        Tau2Method::Smc => tau2_median(estimates, VarianceMode::Conditional),
        Tau2Method::Smu => tau2_median(estimates, VarianceMode::Unconditional),
        Tau2Method::Dl => tau2_dl(estimates),
        Tau2Method::Reml => tau2_reml(estimates),
        Tau2Method::Mp => tau2_mp(estimates),
        Tau2Method::Kdb => tau2_kdb(estimates),
    }
}

/// A safe upper bracket for any sensible value of the between-study
/// variance: ten times the squared range of the observed effects, plus one.
/// The spread of the effects already contains both sampling noise and true
/// heterogeneity, so the parameter cannot plausibly exceed this.
pub fn tau2_upper_bound(estimates: &[EffectEstimate]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in estimates {
        lo = lo.min(e.g);
        hi = hi.max(e.g);
    }
    10.0 * (hi - lo) * (hi - lo) + 1.0
}

/// Moment estimator on the constant-weight statistic: solves
/// `Q = W * sum q_i (1 - q_i) (sigma2_i + tau2)` for `tau2`, truncating at
/// zero. The sampling variances are the observed conditional estimates or,
/// in the unconditional flavour, the model-implied values at the weighted
/// mean effect and the conditional first-pass estimate.
pub fn tau2_moment(estimates: &[EffectEstimate], mode: VarianceMode) -> Result<Tau2Estimate> {
    match mode {
        VarianceMode::Conditional => {
            let evar: Vec<f64> = estimates.iter().map(|e| e.v2).collect();
            let (value, truncated) = moment_solution(estimates, &evar)?;
            Ok(Tau2Estimate {
                value,
                method: Tau2Method::Ssc,
                truncated,
                iterations: 0,
            })
        }
        VarianceMode::Unconditional => {
            quadform::check_unconditional_df(estimates)?;
            let evar0: Vec<f64> = estimates.iter().map(|e| e.v2).collect();
            let (start, _) = moment_solution(estimates, &evar0)?;
            let delta_hat = qstat::ess_weighted_mean(estimates);
            let evar: Vec<f64> = estimates
                .iter()
                .map(|e| crate::effects::var_g_unconditional(delta_hat, start, e.df(), e.n_tilde()))
                .collect();
            let (value, truncated) = moment_solution(estimates, &evar)?;
            Ok(Tau2Estimate {
                value,
                method: Tau2Method::Ssu,
                truncated,
                iterations: 1,
            })
        }
    }
}

/// Moment estimator with caller-supplied expected sampling variances; the
/// seam the two standard flavours go through, exposed so alternative
/// variance models can be dropped in (and tested) without touching the
/// solver.
pub fn tau2_moment_with_evar(estimates: &[EffectEstimate], evar: &[f64]) -> Result<Tau2Estimate> {
    let (value, truncated) = moment_solution(estimates, evar)?;
    Ok(Tau2Estimate {
        value,
        method: Tau2Method::Ssc,
        truncated,
        iterations: 0,
    })
}

fn moment_solution(estimates: &[EffectEstimate], evar: &[f64]) -> Result<(f64, bool)> {
    if evar.len() != estimates.len() {
        return Err(Error::Validation(format!(
            "{} studies but {} expected variances",
            estimates.len(),
            evar.len()
        )));
    }
    for (i, &v) in evar.iter().enumerate() {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Validation(format!(
                "expected variance {i} must be positive, got {v}"
            )));
        }
    }
    let q = qstat::q_f(estimates)?.value;
    let w = qstat::weights(estimates, WeightScheme::EffectiveSampleSize)?;
    let total: f64 = w.iter().sum();
    let mut bias = 0.0;
    let mut slope = 0.0;
    for (&wi, &v) in w.iter().zip(evar) {
        let qi = wi / total;
        bias += qi * (1.0 - qi) * v;
        slope += qi * (1.0 - qi);
    }
    let raw = (q / total - bias) / slope;
    if raw < 0.0 {
        Ok((0.0, true))
    } else {
        Ok((raw, false))
    }
}

/// Median estimator on the constant-weight statistic: the value of `tau2` at
/// which the observed statistic sits at the median of its exact null
/// distribution. Returns zero (truncated) when the statistic is already at
/// or below the median of the zero-heterogeneity distribution.
pub fn tau2_median(estimates: &[EffectEstimate], mode: VarianceMode) -> Result<Tau2Estimate> {
    let method = match mode {
        VarianceMode::Conditional => Tau2Method::Smc,
        VarianceMode::Unconditional => Tau2Method::Smu,
    };
    if mode == VarianceMode::Unconditional {
        quadform::check_unconditional_df(estimates)?;
    }
    let q = qstat::q_f(estimates)?.value;
    let evals = Cell::new(0u32);
    let objective = |t: f64| {
        evals.set(evals.get() + 1);
        Ok(quadform::ess_mixture_cdf(estimates, t, mode, q, DEFAULT_EPS)? - 0.5)
    };
    let f0 = objective(0.0)?;
    if f0 <= 0.0 {
        return Ok(Tau2Estimate {
            value: 0.0,
            method,
            truncated: true,
            iterations: evals.get(),
        });
    }
    let value = solve::solve_decreasing(objective, f0, tau2_upper_bound(estimates), TAU2_TOL)?;
    Ok(Tau2Estimate {
        value,
        method,
        truncated: false,
        iterations: evals.get(),
    })
}

/// Classical inverse-variance moment estimator.
pub fn tau2_dl(estimates: &[EffectEstimate]) -> Result<Tau2Estimate> {
    let q = qstat::q_iv(estimates)?.value;
    let w = qstat::weights(estimates, WeightScheme::InverseVariance)?;
    let k = estimates.len() as f64;
    let s1: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|wi| wi * wi).sum();
    let raw = (q - (k - 1.0)) / (s1 - s2 / s1);
    let truncated = raw < 0.0;
    Ok(Tau2Estimate {
        value: raw.max(0.0),
        method: Tau2Method::Dl,
        truncated,
        iterations: 0,
    })
}

/// Root of the generalized Q statistic at its large-sample expectation
/// `K - 1`.
pub fn tau2_mp(estimates: &[EffectEstimate]) -> Result<Tau2Estimate> {
    generalized_q_root(estimates, estimates.len() as f64 - 1.0, Tau2Method::Mp)
}

/// Root of the generalized Q statistic at the small-sample corrected null
/// mean; reduces toward the `K - 1` version as the studies grow.
pub fn tau2_kdb(estimates: &[EffectEstimate]) -> Result<Tau2Estimate> {
    let target = quadform::corrected_null_df(estimates)?;
    generalized_q_root(estimates, target, Tau2Method::Kdb)
}

fn generalized_q_root(
    estimates: &[EffectEstimate],
    target: f64,
    method: Tau2Method,
) -> Result<Tau2Estimate> {
    qstat::check_k(estimates.len())?;
    let evals = Cell::new(0u32);
    let objective = |t: f64| {
        evals.set(evals.get() + 1);
        Ok(qstat::q_generalized(estimates, t) - target)
    };
    let f0 = objective(0.0)?;
    if f0 <= 0.0 {
        return Ok(Tau2Estimate {
            value: 0.0,
            method,
            truncated: true,
            iterations: evals.get(),
        });
    }
    let value = solve::solve_decreasing(objective, f0, tau2_upper_bound(estimates), TAU2_TOL)?;
    Ok(Tau2Estimate {
        value,
        method,
        truncated: false,
        iterations: evals.get(),
    })
}

/// Restricted maximum likelihood via the standard fixed-point update,
/// truncating at zero, started from the inverse-variance moment estimate.
pub fn tau2_reml(estimates: &[EffectEstimate]) -> Result<Tau2Estimate> {
    let mut t = tau2_dl(estimates)?.value;
    for it in 1..=REML_MAX_ITER {
        let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.v2 + t)).collect();
        let sw: f64 = w.iter().sum();
        let theta: f64 = estimates.iter().zip(&w).map(|(e, wi)| wi * e.g).sum::<f64>() / sw;
        let mut num = 0.0;
        let mut den = 0.0;
        for (e, wi) in estimates.iter().zip(&w) {
            let r = e.g - theta;
            num += wi * wi * (r * r - e.v2);
            den += wi * wi;
        }
        let raw = num / den + 1.0 / sw;
        let next = raw.max(0.0);
        if (next - t).abs() <= REML_REL_TOL * next.max(1.0) {
            return Ok(Tau2Estimate {
                value: next,
                method: Tau2Method::Reml,
                truncated: raw < 0.0,
                iterations: it,
            });
        }
        t = next;
    }
    Err(Error::NonConvergence {
        iterations: REML_MAX_ITER,
        last: t,
    })
}

/// Restricted log-likelihood of the random-effects model at `tau2`, profiled
/// over the mean: the criterion maximized by [`tau2_reml`] and traced out by
/// the profile-likelihood interval.
pub fn restricted_loglik(estimates: &[EffectEstimate], tau2: f64) -> Result<f64> {
    qstat::check_k(estimates.len())?;
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::Validation(format!(
            "tau2 must be finite and nonnegative, got {tau2}"
        )));
    }
    let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.v2 + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let theta: f64 = estimates.iter().zip(&w).map(|(e, wi)| wi * e.g).sum::<f64>() / sw;
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for (e, wi) in estimates.iter().zip(&w) {
        logdet += (e.v2 + tau2).ln();
        let r = e.g - theta;
        quad += wi * r * r;
    }
    Ok(-0.5 * (logdet + sw.ln() + quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::StudySummary;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn from_precomputed(gs: &[f64], v2: f64, n_t: u32, n_c: u32) -> Vec<EffectEstimate> {
        gs.iter()
            .map(|&g| {
                EffectEstimate::from_summary(&StudySummary::Precomputed { g, v2, n_t, n_c })
                    .unwrap()
            })
            .collect()
    }

    /// A moderately heterogeneous synthetic data set used across tests.
    fn demo_estimates() -> Vec<EffectEstimate> {
        let gs = [0.1, 0.6, -0.3, 0.9, 0.2, 1.4];
        let ns = [(12u32, 14u32), (20, 20), (15, 25), (30, 30), (22, 18), (40, 45)];
        gs.iter()
            .zip(&ns)
            .map(|(&g, &(n_t, n_c))| EffectEstimate {
                g,
                v2: crate::effects::var_g_conditional(g, n_t, n_c),
                n_t,
                n_c,
            })
            .collect()
    }

    #[test]
    fn moment_conditional_exact_value() {
        // Equal effective sizes 5 and equal variances 0.2; the weighted sum of
        // squares is 7, the total weight 15, and the solution comes out at
        // exactly one half.
        let est = from_precomputed(&[0.7f64.sqrt(), 0.0, -(0.7f64.sqrt())], 0.2, 10, 10);
        let t = tau2_moment(&est, VarianceMode::Conditional).unwrap();
        assert_abs_diff_eq!(t.value, 0.5, epsilon = 1e-12);
        assert!(!t.truncated);
        assert_eq!(t.method, Tau2Method::Ssc);
    }

    #[test]
    fn moment_truncates_for_homogeneous_effects() {
        let est = from_precomputed(&[0.3, 0.3, 0.3, 0.3], 0.25, 10, 10);
        let t = tau2_moment(&est, VarianceMode::Conditional).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.truncated);
    }

    #[test]
    fn moment_seam_collapses_to_conditional() {
        let est = demo_estimates();
        let evar: Vec<f64> = est.iter().map(|e| e.v2).collect();
        let a = tau2_moment(&est, VarianceMode::Conditional).unwrap();
        let b = tau2_moment_with_evar(&est, &evar).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 0.0);
    }

    #[test]
    fn moment_unconditional_is_one_refinement_pass() {
        let est = demo_estimates();
        let ssc = tau2_moment(&est, VarianceMode::Conditional).unwrap();
        let delta_hat = qstat::ess_weighted_mean(&est);
        let evar: Vec<f64> = est
            .iter()
            .map(|e| crate::effects::var_g_unconditional(delta_hat, ssc.value, e.df(), e.n_tilde()))
            .collect();
        let by_hand = tau2_moment_with_evar(&est, &evar).unwrap();
        let ssu = tau2_moment(&est, VarianceMode::Unconditional).unwrap();
        assert_abs_diff_eq!(ssu.value, by_hand.value, epsilon = 0.0);
        assert_eq!(ssu.method, Tau2Method::Ssu);
        assert_eq!(ssu.iterations, 1);
    }

    #[test]
    fn moment_unconditional_rejects_two_degree_studies() {
        let est = from_precomputed(&[0.1, 0.5, 0.9], 0.3, 2, 2);
        assert!(matches!(
            tau2_moment(&est, VarianceMode::Unconditional),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn median_solution_puts_statistic_at_the_median() {
        let est = demo_estimates();
        let q = qstat::q_f(&est).unwrap().value;
        for mode in [VarianceMode::Conditional, VarianceMode::Unconditional] {
            let t = tau2_median(&est, mode).unwrap();
            assert!(!t.truncated, "demo data should give a positive median estimate");
            let f = quadform::ess_mixture_cdf(&est, t.value, mode, q, 1e-10).unwrap();
            assert!((f - 0.5).abs() < 1e-4, "CDF at solution = {f}");
            assert!(t.iterations > 0);
        }
    }

    #[test]
    fn median_truncates_when_statistic_is_below_the_null_median() {
        let est = from_precomputed(&[0.31, 0.30, 0.29, 0.30], 0.25, 10, 10);
        let t = tau2_median(&est, VarianceMode::Conditional).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.truncated);
    }

    #[test]
    fn inverse_variance_moment_exact_value() {
        // Unit variances: S1 = 3, S2 = 3, Q = 4, K - 1 = 2; the solution is
        // (4 - 2) / (3 - 1) = 1.
        let est = from_precomputed(&[2.0f64.sqrt(), 0.0, -(2.0f64.sqrt())], 1.0, 10, 10);
        let t = tau2_dl(&est).unwrap();
        assert_abs_diff_eq!(t.value, 1.0, epsilon = 1e-12);
        assert!(!t.truncated);
    }

    #[test]
    fn inverse_variance_moment_truncates() {
        let est = from_precomputed(&[0.1, 0.1, 0.1], 1.0, 10, 10);
        let t = tau2_dl(&est).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.truncated);
    }

    #[test]
    fn generalized_q_root_hits_its_target() {
        let est = demo_estimates();
        let mp = tau2_mp(&est).unwrap();
        assert!(!mp.truncated);
        let k1 = est.len() as f64 - 1.0;
        assert!((qstat::q_generalized(&est, mp.value) - k1).abs() < 1e-4);

        let kdb = tau2_kdb(&est).unwrap();
        let df = quadform::corrected_null_df(&est).unwrap();
        assert!((qstat::q_generalized(&est, kdb.value) - df).abs() < 1e-4);
        // A smaller target means more heterogeneity is needed to bring the
        // statistic down to it.
        assert!(df < k1);
        assert!(kdb.value > mp.value);
    }

    #[test]
    fn generalized_q_root_truncates_below_target() {
        let est = from_precomputed(&[0.3, 0.32, 0.28, 0.3], 0.5, 10, 10);
        let t = tau2_mp(&est).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.truncated);
    }

    #[test]
    fn reml_maximizes_the_restricted_likelihood() {
        let est = demo_estimates();
        let t = tau2_reml(&est).unwrap();
        assert!(!t.truncated);
        let at = restricted_loglik(&est, t.value).unwrap();
        // Local stationarity.
        let h = 1e-4;
        assert!(at >= restricted_loglik(&est, (t.value - h).max(0.0)).unwrap() - 1e-6);
        assert!(at >= restricted_loglik(&est, t.value + h).unwrap() - 1e-6);
        // Global against a fine grid.
        let ub = tau2_upper_bound(&est);
        let grid_best = (0..4000)
            .map(|i| restricted_loglik(&est, ub * i as f64 / 4000.0).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(at + 1e-5 >= grid_best, "fixed point {at} vs grid {grid_best}");
    }

    #[test]
    fn reml_truncates_for_homogeneous_effects() {
        let est = from_precomputed(&[0.2, 0.21, 0.2, 0.19], 0.4, 10, 10);
        let t = tau2_reml(&est).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.truncated);
    }

    #[test]
    fn dispatcher_reaches_every_method() {
        let est = demo_estimates();
        for method in Tau2Method::ALL {
            let t = estimate_tau2(&est, method).unwrap();
            assert_eq!(t.method, method);
            assert!(t.value.is_finite() && t.value >= 0.0);
            assert!(!t.truncated, "demo data is clearly heterogeneous under {method}");
        }
    }

    #[test]
    fn method_labels_round_trip() {
        for method in Tau2Method::ALL {
            let label = method.to_string();
            assert_eq!(label.parse::<Tau2Method>().unwrap(), method);
            assert_eq!(label.to_lowercase().parse::<Tau2Method>().unwrap(), method);
        }
        assert!("XYZ".parse::<Tau2Method>().is_err());
        // Serde uses the same labels as Display.
        let json = serde_json::to_string(&Tau2Method::Reml).unwrap();
        assert_eq!(json, "\"REML\"");
    }

    #[test]
    fn upper_bound_dominates_every_estimate() {
        let est = demo_estimates();
        let ub = tau2_upper_bound(&est);
        for method in Tau2Method::ALL {
            let t = estimate_tau2(&est, method).unwrap();
            assert!(t.value < ub, "{method} exceeded the universal bracket");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// No estimator panics or returns a negative/non-finite value on
        /// arbitrary small data sets; structured errors are allowed where
        /// the method's requirements are not met.
        #[test]
        fn estimators_are_total_on_valid_inputs(
            seed_gs in proptest::collection::vec(-2.5f64..2.5, 2..7),
            ns in proptest::collection::vec(5u32..60, 2..7),
        ) {
            let k = seed_gs.len().min(ns.len());
            let est: Vec<EffectEstimate> = seed_gs[..k]
                .iter()
                .zip(&ns[..k])
                .map(|(&g, &n)| {
                    let n_c = n / 2;
                    let n_t = n - n_c;
                    EffectEstimate {
                        g,
                        v2: crate::effects::var_g_conditional(g, n_t, n_c),
                        n_t,
                        n_c,
                    }
                })
                .collect();
            for method in Tau2Method::ALL {
                match estimate_tau2(&est, method) {
                    Ok(t) => {
                        prop_assert!(t.value.is_finite() && t.value >= 0.0);
                        prop_assert!(!t.truncated || t.value == 0.0);
                    }
                    Err(Error::Validation(_)) | Err(Error::NonConvergence { .. }) => {}
                    Err(e) => return Err(TestCaseError::fail(format!("{method}: {e}"))),
                }
            }
        }
    }
}

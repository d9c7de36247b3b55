//! Standardized mean differences for two-arm studies.
//!
//! A study reports means and a pooled standard deviation for a treatment arm
//! of size `n_t` and a control arm of size `n_c`. The standardized difference
//! is estimated by the bias-corrected form
//!
//! ```text
//! g = J(m) * (mean_t - mean_c) / sd_pooled,    m = n_t + n_c - 2,
//! J(m) = Gamma(m/2) / (sqrt(m/2) * Gamma((m-1)/2)),
//! ```
//!
//! which is unbiased for the true standardized difference delta. Scaled by the
//! effective sample size `ntilde = n_t*n_c/(n_t+n_c)`, `g` follows a scaled
//! noncentral t distribution:
//!
//! ```text
//! sqrt(ntilde) * g / J(m)  ~  t_m(sqrt(ntilde) * delta).
//! ```
//!
//! Two variances of `g` matter downstream. The conditional variance treats the
//! study's true effect as fixed and is estimated unbiasedly from `g` itself;
//! the unconditional variance averages the conditional one over a normal
//! between-study distribution with mean `delta` and variance `tau2`, and has a
//! closed form in the t moments. Both are provided here, along with a sampler
//! for the exact small-sample distribution of `g`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Floor applied when a plug-in unconditional variance comes out nonpositive.
pub const VAR_FLOOR: f64 = 1e-10;

/// Which variance of `g` gets plugged into moment and distribution formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceMode {
    /// The estimated conditional variance `v2` carried by each study.
    Conditional,
    /// The closed-form expected variance under the random-effects model,
    /// evaluated at a plug-in overall effect and heterogeneity value.
    Unconditional,
}

/// Summary statistics for one study, either raw arms or a precomputed effect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StudySummary {
    Raw {
        n_t: u32,
        n_c: u32,
        mean_t: f64,
        mean_c: f64,
        sd_pooled: f64,
    },
    Precomputed {
        g: f64,
        v2: f64,
        n_t: u32,
        n_c: u32,
    },
}

/// A study's estimated effect with the design quantities that travel with it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    /// Bias-corrected standardized mean difference.
    pub g: f64,
    /// Estimated conditional variance of `g`.
    pub v2: f64,
    pub n_t: u32,
    pub n_c: u32,
}

impl EffectEstimate {
    /// Builds an estimate from either kind of study summary.
    pub fn from_summary(s: &StudySummary) -> Result<Self> {
        match *s {
            StudySummary::Raw {
                n_t,
                n_c,
                mean_t,
                mean_c,
                sd_pooled,
            } => hedges_g(n_t, n_c, mean_t, mean_c, sd_pooled),
            StudySummary::Precomputed { g, v2, n_t, n_c } => {
                check_arms(n_t, n_c)?;
                if !g.is_finite() || !v2.is_finite() || v2 <= 0.0 {
                    return Err(Error::DegenerateStudy(format!(
                        "precomputed effect needs finite g and v2 > 0 (got g={g}, v2={v2})"
                    )));
                }
                Ok(EffectEstimate { g, v2, n_t, n_c })
            }
        }
    }

    /// Total sample size of the study.
    pub fn n(&self) -> u32 {
        self.n_t + self.n_c
    }

    /// Degrees of freedom of the pooled standard deviation, `n_t + n_c - 2`.
    pub fn df(&self) -> f64 {
        f64::from(self.n_t + self.n_c - 2)
    }

    /// Effective sample size `n_t * n_c / (n_t + n_c)`.
    pub fn n_tilde(&self) -> f64 {
        effective_sample_size(self.n_t, self.n_c)
    }

    /// Fraction of the study allocated to the control arm.
    pub fn control_fraction(&self) -> f64 {
        f64::from(self.n_c) / f64::from(self.n_t + self.n_c)
    }
}

fn check_arms(n_t: u32, n_c: u32) -> Result<()> {
    if n_t < 2 || n_c < 2 {
        return Err(Error::Validation(format!(
            "both arms need at least 2 observations (got n_t={n_t}, n_c={n_c})"
        )));
    }
    Ok(())
}

/// Small-sample bias correction factor for the standardized mean difference,
/// `Gamma(m/2) / (sqrt(m/2) * Gamma((m-1)/2))`, computed on the log scale.
///
/// Increases toward 1 as `m` grows; roughly `1 - 3/(4m - 1)`.
///
/// # Panics
/// If `m < 2`.
pub fn bias_correction_factor(m: f64) -> f64 {
    assert!(m >= 2.0, "degrees of freedom must be at least 2, got {m}");
    ((ln_gamma(m / 2.0) - ln_gamma((m - 1.0) / 2.0)).exp()) / (m / 2.0).sqrt()
}

/// Bias-corrected standardized mean difference and its estimated variance.
pub fn hedges_g(n_t: u32, n_c: u32, mean_t: f64, mean_c: f64, sd_pooled: f64) -> Result<EffectEstimate> {
    check_arms(n_t, n_c)?;
    if !mean_t.is_finite() || !mean_c.is_finite() {
        return Err(Error::Validation(format!(
            "arm means must be finite (got mean_t={mean_t}, mean_c={mean_c})"
        )));
    }
    if !sd_pooled.is_finite() || sd_pooled <= 0.0 {
        return Err(Error::DegenerateStudy(format!(
            "pooled standard deviation must be positive, got {sd_pooled}"
        )));
    }
    let m = f64::from(n_t + n_c - 2);
    let g = bias_correction_factor(m) * (mean_t - mean_c) / sd_pooled;
    let v2 = var_g_conditional(g, n_t, n_c);
    Ok(EffectEstimate { g, v2, n_t, n_c })
}

/// Unbiased estimate of the conditional variance of `g` given the true effect:
/// `(n_t + n_c)/(n_t * n_c) + (1 - (m-2)/(m * J(m)^2)) * g^2`.
pub fn var_g_conditional(g: f64, n_t: u32, n_c: u32) -> f64 {
    let m = f64::from(n_t + n_c - 2);
    let j = bias_correction_factor(m);
    let nt = f64::from(n_t);
    let nc = f64::from(n_c);
    (nt + nc) / (nt * nc) + (1.0 - (m - 2.0) / (m * j * j)) * g * g
}

/// Expected conditional variance of `g` under the random-effects model, where
/// the study's true effect is normal with mean `delta` and variance `tau2`:
///
/// ```text
/// E(v^2) = J(m)^2 * m * (1 + ntilde*(delta^2 + tau2)) / ((m-2) * ntilde)
///          - (delta^2 + tau2),
/// ```
///
/// floored at a tiny positive value as a guard against extreme plug-ins.
///
/// # Panics
/// If `m <= 2` (the t distribution has no second moment there) or `tau2 < 0`.
pub fn var_g_unconditional(delta: f64, tau2: f64, m: f64, n_tilde: f64) -> f64 {
    assert!(m > 2.0, "unconditional variance needs m > 2, got {m}");
    assert!(tau2 >= 0.0, "tau2 must be nonnegative, got {tau2}");
    assert!(n_tilde > 0.0);
    let j = bias_correction_factor(m);
    let spread = delta * delta + tau2;
    let raw = j * j * m * (1.0 + n_tilde * spread) / ((m - 2.0) * n_tilde) - spread;
    raw.max(VAR_FLOOR)
}

/// Effective sample size `n_t * n_c / (n_t + n_c)`; the constant weight.
pub fn effective_sample_size(n_t: u32, n_c: u32) -> f64 {
    let nt = f64::from(n_t);
    let nc = f64::from(n_c);
    nt * nc / (nt + nc)
}

/// Draws from the exact small-sample distribution of `g` for a fixed design,
/// built once per study and reused across replications.
#[derive(Clone, Debug)]
pub struct GSampler {
    scale: f64,
    sqrt_n_tilde: f64,
    m: f64,
    chi: ChiSquared<f64>,
}

impl GSampler {
    /// # Panics
    /// If `m < 2` or `n_tilde <= 0`.
    pub fn new(m: f64, n_tilde: f64) -> Self {
        assert!(n_tilde > 0.0);
        GSampler {
            scale: bias_correction_factor(m) / n_tilde.sqrt(),
            sqrt_n_tilde: n_tilde.sqrt(),
            m,
            chi: ChiSquared::new(m).expect("m >= 2 checked by bias_correction_factor"),
        }
    }

    /// One draw of `g` given the study's true effect `delta_i`:
    /// a noncentral t variate with `m` degrees of freedom and noncentrality
    /// `sqrt(ntilde) * delta_i`, scaled by `J(m)/sqrt(ntilde)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, delta_i: f64) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let v: f64 = self.chi.sample(rng).max(f64::MIN_POSITIVE);
        self.scale * (z + self.sqrt_n_tilde * delta_i) / (v / self.m).sqrt()
    }
}

/// Convenience wrapper around [`GSampler`] for one-off draws.
pub fn sample_g<R: Rng + ?Sized>(rng: &mut R, delta_i: f64, m: f64, n_tilde: f64) -> f64 {
    GSampler::new(m, n_tilde).sample(rng, delta_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn bias_correction_matches_exact_half_integer_gammas() {
        // m = 2: Gamma(1) / (sqrt(1) * Gamma(1/2)) = 1/sqrt(pi).
        assert_abs_diff_eq!(bias_correction_factor(2.0), 1.0 / PI.sqrt(), epsilon = 1e-14);
        // m = 10: Gamma(5) = 24, Gamma(4.5) = 3.5*2.5*1.5*0.5*sqrt(pi).
        let g45 = 3.5 * 2.5 * 1.5 * 0.5 * PI.sqrt();
        assert_abs_diff_eq!(
            bias_correction_factor(10.0),
            24.0 / (5.0_f64.sqrt() * g45),
            epsilon = 1e-13
        );
        // m = 20: Gamma(10) = 362880, Gamma(9.5) by the falling product.
        let g95 = 8.5 * 7.5 * 6.5 * 5.5 * 4.5 * 3.5 * 2.5 * 1.5 * 0.5 * PI.sqrt();
        assert_abs_diff_eq!(
            bias_correction_factor(20.0),
            362880.0 / (10.0_f64.sqrt() * g95),
            epsilon = 1e-13
        );
    }

    #[test]
    fn bias_correction_near_one_for_large_m() {
        let m = 10_000.0;
        assert_abs_diff_eq!(bias_correction_factor(m), 1.0 - 3.0 / (4.0 * m - 1.0), epsilon = 1e-6);
        let mut last = 0.0;
        for m in [2.0, 5.0, 10.0, 50.0, 200.0, 1000.0] {
            let j = bias_correction_factor(m);
            assert!(j > last && j < 1.0, "J({m}) = {j} not increasing toward 1");
            last = j;
        }
    }

    #[test]
    fn hedges_g_small_balanced_study() {
        // n_t = n_c = 10: m = 18, unit mean difference at unit pooled sd.
        let est = hedges_g(10, 10, 1.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(est.g, bias_correction_factor(18.0), epsilon = 1e-14);
        assert_abs_diff_eq!(est.v2, var_g_conditional(est.g, 10, 10), epsilon = 1e-15);
        assert_abs_diff_eq!(est.n_tilde(), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(est.control_fraction(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn hedges_g_rejects_bad_input() {
        assert!(matches!(
            hedges_g(1, 10, 0.0, 0.0, 1.0),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            hedges_g(10, 10, 0.0, 0.0, 0.0),
            Err(Error::DegenerateStudy(_))
        ));
        assert!(matches!(
            hedges_g(10, 10, f64::NAN, 0.0, 1.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn conditional_variance_at_zero_effect_is_arm_sum() {
        assert_abs_diff_eq!(var_g_conditional(0.0, 10, 10), 0.2, epsilon = 1e-15);
        // Even in g, so the sign cannot matter.
        assert_abs_diff_eq!(
            var_g_conditional(0.7, 12, 24),
            var_g_conditional(-0.7, 12, 24),
            epsilon = 1e-15
        );
    }

    #[test]
    fn unconditional_variance_closed_form_small_sample() {
        // delta = 0, tau2 = 0, m = 18, ntilde = 5: J(18)^2 * 18 / (16 * 5).
        let j = bias_correction_factor(18.0);
        let expect = j * j * 18.0 / 80.0;
        assert_abs_diff_eq!(var_g_unconditional(0.0, 0.0, 18.0, 5.0), expect, epsilon = 1e-14);
        assert_abs_diff_eq!(expect, 0.206344502818041, epsilon = 1e-12);
    }

    #[test]
    fn unconditional_variance_matches_two_stage_monte_carlo() {
        // Draw the true effect, then g; the spread of g minus tau2 estimates
        // the expected conditional variance.
        let (delta, tau2, m, n_tilde) = (0.5, 1.0_f64, 38.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sampler = GSampler::new(m, n_tilde);
        let n = 200_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let delta_i = delta + tau2.sqrt() * z;
            draws.push(sampler.sample(&mut rng, delta_i));
        }
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let mu4 = draws.iter().map(|g| (g - mean).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((mu4 - var * var) / n as f64).sqrt();
        let mc_estimate = var - tau2;
        let formula = var_g_unconditional(delta, tau2, m, n_tilde);
        assert!(
            (formula - mc_estimate).abs() <= 3.0 * se_var,
            "formula {formula} vs MC {mc_estimate} (3 SE = {})",
            3.0 * se_var
        );
    }

    #[test]
    fn effective_sample_size_examples() {
        assert_abs_diff_eq!(effective_sample_size(10, 10), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(effective_sample_size(64, 16), 12.8, epsilon = 1e-12);
    }

    #[test]
    fn sampler_mean_and_variance_match_theory() {
        let (delta_i, m, n_tilde) = (0.7, 18.0, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sampler = GSampler::new(m, n_tilde);
        let n = 300_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let g = sampler.sample(&mut rng, delta_i);
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // g is unbiased for delta_i; its variance at tau2 = 0 is the
        // unconditional formula evaluated at the fixed effect.
        let expect_var = var_g_unconditional(delta_i, 0.0, m, n_tilde);
        let se_mean = (expect_var / n as f64).sqrt();
        assert!((mean - delta_i).abs() <= 4.0 * se_mean, "mean {mean} vs {delta_i}");
        assert!((var - expect_var).abs() / expect_var < 0.02, "var {var} vs {expect_var}");
    }

    #[test]
    fn precomputed_summary_round_trips() {
        let s = StudySummary::Precomputed { g: 0.4, v2: 0.1, n_t: 20, n_c: 10 };
        let est = EffectEstimate::from_summary(&s).unwrap();
        assert_eq!(est.n(), 30);
        assert_abs_diff_eq!(est.df(), 28.0, epsilon = 0.0);
        assert!(EffectEstimate::from_summary(&StudySummary::Precomputed {
            g: 0.4,
            v2: 0.0,
            n_t: 20,
            n_c: 10
        })
        .is_err());
    }
}

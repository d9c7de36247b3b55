//! Distribution of quadratic forms in independent normals.
//!
//! For fixed weights, the heterogeneity statistic is `Q = g' A g` with
//! independent `g_i ~ N(theta, sigma2_i + tau2)`, so `Q` is distributed as a
//! weighted sum of independent one-degree chi-squares,
//!
//! ```text
//! Q  ~  sum_j lambda_j * chisq_1,
//! ```
//!
//! where the `lambda_j` are the eigenvalues of `Sigma^(1/2) A Sigma^(1/2)`.
//! The exact CDF of such a sum is computed by expanding it into a series of
//! central chi-square CDFs: with a scale `beta`,
//!
//! ```text
//! P(Q <= x) = sum_k a_k * P(chisq_{rho + 2k} <= x / beta),
//! ```
//!
//! whose coefficients follow a simple recursion in the power sums of
//! `1 - beta/lambda_j`. The scale used here is the harmonic mean of the
//! smallest and largest positive weight, which roughly balances the
//! convergence ratio; the truncation error is controlled by a companion
//! series with absolute-value power sums whose total is known in closed form,
//! giving a computable bound on everything not yet summed.
//!
//! Cheaper approximations live alongside: a two-moment gamma match, the
//! plain chi-square reference with `K - 1` degrees of freedom, a chi-square
//! with a small-sample corrected mean as its degrees of freedom, and the
//! mixture CDF built from inverse-variance weights.

use nalgebra::DMatrix;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::effects::{EffectEstimate, VarianceMode};
use crate::error::{Error, Result};
use crate::gauss;
use crate::qstat::{self, WeightScheme};

/// Hard cap on series length before giving up.
pub const MAX_SERIES_TERMS: usize = 10_000;

/// Default accuracy requested from the series by the estimators in this crate.
pub const DEFAULT_EPS: f64 = 1e-8;

/// A weighted sum of independent one-degree chi-square variables; weights are
/// stored in descending order and zero weights are tolerated (they contribute
/// nothing but witness a reduced rank).
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareMixture {
    lambdas: Vec<f64>,
}

impl ChiSquareMixture {
    /// Validates and sorts the weights: all finite and nonnegative, at least
    /// one strictly positive.
    pub fn new(mut lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Validation("mixture needs at least one weight".into()));
        }
        for &l in &lambdas {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::Validation(format!(
                    "mixture weights must be finite and nonnegative, got {l}"
                )));
            }
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            return Err(Error::Validation("all mixture weights are zero".into()));
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(ChiSquareMixture { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// First moment, `sum(lambda)`.
    pub fn mean(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// Second central moment, `2 * sum(lambda^2)`.
    pub fn variance(&self) -> f64 {
        2.0 * self.lambdas.iter().map(|l| l * l).sum::<f64>()
    }
}

/// Chi-square CDF with arbitrary positive (not necessarily integer) degrees
/// of freedom.
fn chi2_cdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(df / 2.0, x / 2.0)
    }
}

/// Builds the mixture for `Q` with fixed `weights` and per-study variances
/// `sigma2_i + tau2`: the weights of the sum are the eigenvalues of
/// `Sigma^(1/2) A Sigma^(1/2)`, computed from its diagonal-minus-rank-one
/// form. Exactly one eigenvalue is zero in exact arithmetic (the centering
/// direction); anything within `1e-8` of zero relative to the largest is
/// clamped to zero.
pub fn mixture_from_q(weights: &[f64], sigma2: &[f64], tau2: f64) -> Result<ChiSquareMixture> {
    qstat::check_k(weights.len())?;
    if weights.len() != sigma2.len() {
        return Err(Error::Validation(format!(
            "{} weights but {} variances",
            weights.len(),
            sigma2.len()
        )));
    }
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::Validation(format!("tau2 must be finite and nonnegative, got {tau2}")));
    }
    let k = weights.len();
    let mut var = vec![0.0; k];
    for i in 0..k {
        let w = weights[i];
        let s = sigma2[i] + tau2;
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Validation(format!("weight {i} must be positive, got {w}")));
        }
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Validation(format!(
                "variance {i} must be positive, got {s}"
            )));
        }
        var[i] = s;
    }
    let total: f64 = weights.iter().sum();
    // M = diag(w_i * s_i) - u u' / W with u_i = w_i * sqrt(s_i).
    let u: Vec<f64> = weights.iter().zip(&var).map(|(w, s)| w * s.sqrt()).collect();
    let mat = DMatrix::from_fn(k, k, |i, j| {
        let off = -u[i] * u[j] / total;
        if i == j {
            weights[i] * var[i] + off
        } else {
            off
        }
    });
    let eig = mat.symmetric_eigen();
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let lmax = lambdas[0];
    let tol = 1e-8 * lmax.max(1.0);
    for l in lambdas.iter_mut() {
        if l.abs() <= tol {
            *l = 0.0;
        } else if *l < 0.0 {
            return Err(Error::Numeric(format!(
                "negative eigenvalue {l} from a positive semidefinite form (k={k}, largest {lmax})"
            )));
        }
    }
    ChiSquareMixture::new(lambdas)
}

/// First two moments of `Q` for fixed weights and variances `sigma2_i + tau2`,
/// from the trace identities (no eigendecomposition):
/// mean `trace(A Sigma)`, variance `2 trace((A Sigma)^2)`.
pub fn q_moments(weights: &[f64], sigma2: &[f64], tau2: f64) -> (f64, f64) {
    debug_assert_eq!(weights.len(), sigma2.len());
    let total: f64 = weights.iter().sum();
    let mut sum_ws = 0.0; // sum w_i s_i
    let mut sum_w2s = 0.0; // sum w_i^2 s_i
    let mut sum_w2s2 = 0.0; // sum w_i^2 s_i^2
    let mut sum_w3s2 = 0.0; // sum w_i^3 s_i^2
    for (&w, &s0) in weights.iter().zip(sigma2) {
        let s = s0 + tau2;
        sum_ws += w * s;
        sum_w2s += w * w * s;
        sum_w2s2 += w * w * s * s;
        sum_w3s2 += w * w * w * s * s;
    }
    let mean = sum_ws - sum_w2s / total;
    let sum_sq = sum_w2s2 - 2.0 * sum_w3s2 / total + (sum_w2s / total) * (sum_w2s / total);
    (mean, 2.0 * sum_sq)
}

/// Exact CDF of the mixture at `x` by the chi-square series, to within `eps`.
///
/// The return is guaranteed within `eps` of the true probability by the
/// companion-series remainder bound. Fails with
/// [`Error::SeriesNonConvergence`] if the bound is still above `eps` after
/// [`MAX_SERIES_TERMS`] terms (extreme weight ratios); callers that can live
/// with an approximation then fall back to [`gamma_two_moment_cdf`], see
/// [`mixture_cdf`].
pub fn farebrother_cdf(mix: &ChiSquareMixture, x: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Usage(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    if !(x >= 0.0) {
        return Err(Error::Usage(format!("evaluation point must be nonnegative, got {x}")));
    }
    let lam: Vec<f64> = mix.lambdas.iter().copied().filter(|&l| l > 0.0).collect();
    let rho = lam.len() as f64;
    if x == 0.0 {
        return Ok(0.0);
    }
    let lmin = lam[lam.len() - 1];
    let lmax = lam[0];
    let beta = 2.0 * lmin * lmax / (lmin + lmax);
    let y = x / beta;

    // Convergence ratios and the coefficient scales. log a0 = sum log sqrt(beta/lambda);
    // the companion total B = prod sqrt(beta / (lambda * (1 - |gamma|))) bounds
    // the sum of absolute coefficients.
    let gam: Vec<f64> = lam.iter().map(|l| 1.0 - beta / l).collect();
    let mut log_a0 = 0.0;
    let mut log_btot = 0.0;
    for (&l, &g) in lam.iter().zip(&gam) {
        log_a0 += 0.5 * (beta / l).ln();
        log_btot += 0.5 * ((beta / l).ln() - (1.0 - g.abs()).ln());
    }
    let a0 = log_a0.exp();
    let btotal = log_btot.exp();

    // Chi-square CDF ladder: c_k = P(chisq_{rho+2k} <= y) with
    // c_{k+1} = c_k - u_k, u_k the Poisson-gamma increment.
    let mut c = chi2_cdf(rho, y);
    let mut u = ((rho / 2.0) * (y / 2.0).ln() - y / 2.0 - ln_gamma(rho / 2.0 + 1.0)).exp();

    let mut pow = gam.clone();
    let mut pow_abs: Vec<f64> = gam.iter().map(|g| g.abs()).collect();
    let mut gsum: Vec<f64> = Vec::new();
    let mut gsum_abs: Vec<f64> = Vec::new();
    let mut coef = vec![a0];
    let mut coef_abs = vec![a0];
    let mut total = a0 * c;
    let mut bsum = a0;
    let mut remainder = (btotal - bsum).max(0.0) * c;
    if remainder <= eps {
        return Ok(total.clamp(0.0, 1.0));
    }

    for k in 1..=MAX_SERIES_TERMS {
        gsum.push(pow.iter().sum());
        gsum_abs.push(pow_abs.iter().sum());
        let mut ak = 0.0;
        let mut bk = 0.0;
        for r in 0..k {
            ak += gsum[k - 1 - r] * coef[r];
            bk += gsum_abs[k - 1 - r] * coef_abs[r];
        }
        ak /= 2.0 * k as f64;
        bk /= 2.0 * k as f64;
        coef.push(ak);
        coef_abs.push(bk);

        c = (c - u).max(0.0);
        u *= (y / 2.0) / (rho / 2.0 + k as f64);
        total += ak * c;
        bsum += bk;

        // Everything past term k has CDF factors at most the next ladder value
        // and absolute coefficients summing to at most btotal - bsum.
        remainder = (btotal - bsum).max(0.0) * c;
        if remainder <= eps {
            return Ok(total.clamp(0.0, 1.0));
        }
        for (p, &g) in pow.iter_mut().zip(&gam) {
            *p *= g;
        }
        for (p, &g) in pow_abs.iter_mut().zip(&gam) {
            *p *= g.abs();
        }
    }
    Err(Error::SeriesNonConvergence {
        terms: MAX_SERIES_TERMS,
        remainder,
    })
}

/// Series CDF with a logged fallback to the two-moment gamma approximation
/// when the series cannot reach the requested accuracy.
pub fn mixture_cdf(mix: &ChiSquareMixture, x: f64, eps: f64) -> Result<f64> {
    match farebrother_cdf(mix, x, eps) {
        Ok(p) => Ok(p),
        Err(Error::SeriesNonConvergence { terms, remainder }) => {
            log::warn!(
                "mixture series stopped after {terms} terms (remainder {remainder:.2e}); \
                 falling back to the two-moment gamma approximation"
            );
            gamma_two_moment_cdf(mix.mean(), mix.variance(), x)
        }
        Err(e) => Err(e),
    }
}

/// Gamma CDF matched to a given mean and variance: shape `mean^2/var`,
/// scale `var/mean`.
pub fn gamma_two_moment_cdf(mean: f64, var: f64, x: f64) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite()) || !(var > 0.0 && var.is_finite()) {
        return Err(Error::Usage(format!(
            "two-moment match needs positive mean and variance, got mean={mean}, var={var}"
        )));
    }
    if x < 0.0 {
        return Err(Error::Usage(format!("evaluation point must be nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let shape = mean * mean / var;
    let rate = mean / var;
    Ok(gamma_lr(shape, rate * x))
}

/// The classical chi-square reference for `K` studies: CDF with `K - 1`
/// degrees of freedom.
pub fn chi_square_null_cdf(k: usize, x: f64) -> Result<f64> {
    qstat::check_k(k)?;
    if x < 0.0 {
        return Err(Error::Usage(format!("evaluation point must be nonnegative, got {x}")));
    }
    Ok(chi2_cdf(k as f64 - 1.0, x))
}

/// Small-sample corrected degrees of freedom for the inverse-variance
/// statistic: an estimate of `E(Q)` under the fitted homogeneous model.
///
/// With estimated weights `w(g) = 1/(a + b g^2)`, the mean of `Q` sits below
/// `K - 1` in small samples because large deviations are downweighted by
/// their own inflated variance estimates. That effect is captured by
/// integrating the weight function against the exact null distribution of
/// each `g_i` (a scaled noncentral t at the pooled effect): per study the
/// moments `E[w]`, `E[w d]`, `E[w d^2]`, `E[w^2 d^2]` of the centered effect
/// `d = g - delta_hat` are computed by Gauss quadrature, then combined through
///
/// ```text
/// E(Q) = sum E[w d^2] - E[(sum w d)^2] / E[sum w],
/// ```
///
/// exact for nonrandom weights and a first-order treatment of the random
/// total. The df converges to `K - 1` as the studies grow. The correction is
/// isolated here so a sharper published expansion can replace it wholesale.
pub fn corrected_null_df(estimates: &[EffectEstimate]) -> Result<f64> {
    let w_iv = qstat::weights(estimates, WeightScheme::InverseVariance)?;
    let wsum: f64 = w_iv.iter().sum();
    let delta_hat = estimates
        .iter()
        .zip(&w_iv)
        .map(|(e, w)| w * e.g)
        .sum::<f64>()
        / wsum;

    let mut cache: std::collections::HashMap<(u32, u32), StudyMoments> = std::collections::HashMap::new();
    let mut sum_w = 0.0;
    let mut sum_wd = 0.0;
    let mut sum_wdd = 0.0;
    let mut sum_wwdd = 0.0;
    let mut sum_wd_sq = 0.0;
    for e in estimates {
        let m = *cache
            .entry((e.n_t, e.n_c))
            .or_insert_with(|| StudyMoments::compute(e, delta_hat));
        sum_w += m.w;
        sum_wd += m.wd;
        sum_wdd += m.wdd;
        sum_wwdd += m.wwdd;
        sum_wd_sq += m.wd * m.wd;
    }
    let num = sum_wwdd + sum_wd * sum_wd - sum_wd_sq;
    let df = sum_wdd - num / sum_w;
    if !df.is_finite() || df <= 0.0 {
        return Err(Error::Numeric(format!(
            "corrected first moment came out nonpositive ({df}) for k={}",
            estimates.len()
        )));
    }
    Ok(df)
}

/// Per-study moments of the random weight against powers of the *centered*
/// effect `d = g - delta_hat`. The statistic is location invariant, so
/// centering changes nothing mathematically but removes the cancellation of
/// two large `delta_hat^2`-dominated sums that would otherwise magnify
/// quadrature error a hundredfold.
#[derive(Clone, Copy)]
struct StudyMoments {
    w: f64,
    wd: f64,
    wdd: f64,
    wwdd: f64,
}

impl StudyMoments {
    /// Moments of the weight function under the study's null distribution at
    /// the pooled effect: outer Gauss-Legendre over the pooled-variance
    /// chi-square, inner Gauss-Hermite over the normal numerator.
    fn compute(e: &EffectEstimate, delta_hat: f64) -> StudyMoments {
        let m = e.df();
        let n_tilde = e.n_tilde();
        let j = crate::effects::bias_correction_factor(m);
        let a = 1.0 / n_tilde;
        let b = 1.0 - (m - 2.0) / (m * j * j);
        let scale = j / n_tilde.sqrt();
        let gamma = n_tilde.sqrt() * delta_hat;

        // Integration range for V ~ chisq_m from a seven-sigma cube-normal
        // bracket; the excluded tail mass is far below the target accuracy.
        let c = 2.0 / (9.0 * m);
        let spread = 7.0 * c.sqrt();
        let lo = (m * (1.0 - c - spread).powi(3)).max(0.0);
        let hi = m * (1.0 - c + spread).powi(3);
        let log_norm = -(m / 2.0) * std::f64::consts::LN_2 - ln_gamma(m / 2.0);

        let outer = gauss::legendre_default();
        let inner = gauss::hermite_default();
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();

        let mut acc = StudyMoments { w: 0.0, wd: 0.0, wdd: 0.0, wwdd: 0.0 };
        for (&xv, &wv) in outer.nodes.iter().zip(&outer.weights) {
            let v = mid + half * xv;
            if v <= 0.0 {
                continue;
            }
            let pdf = (log_norm + (m / 2.0 - 1.0) * v.ln() - v / 2.0).exp();
            let outer_weight = wv * half * pdf;
            let s = (m / v).sqrt();
            for (&xz, &wz) in inner.nodes.iter().zip(&inner.weights) {
                let z = std::f64::consts::SQRT_2 * xz;
                let g = scale * s * (z + gamma);
                let d = g - delta_hat;
                let wfun = 1.0 / (a + b * g * g);
                let weight = outer_weight * wz * inv_sqrt_pi;
                acc.w += weight * wfun;
                acc.wd += weight * wfun * d;
                acc.wdd += weight * wfun * d * d;
                acc.wwdd += weight * wfun * wfun * d * d;
            }
        }
        acc
    }
}

/// Chi-square approximation with the corrected null mean as its degrees of
/// freedom, evaluated at `x`.
pub fn corrected_df_cdf(estimates: &[EffectEstimate], x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Usage(format!("evaluation point must be nonnegative, got {x}")));
    }
    let df = corrected_null_df(estimates)?;
    Ok(chi2_cdf(df, x))
}

/// Mixture CDF for the inverse-variance statistic with its weights held
/// fixed and per-study variances `v2_i + tau2`. At `tau2 = 0` the weights
/// exactly cancel the variances and this reduces to the chi-square reference
/// with `K - 1` degrees of freedom.
pub fn iv_mixture_cdf(estimates: &[EffectEstimate], tau2: f64, x: f64, eps: f64) -> Result<f64> {
    let w = qstat::weights(estimates, WeightScheme::InverseVariance)?;
    let sigma2: Vec<f64> = estimates.iter().map(|e| e.v2).collect();
    let mix = mixture_from_q(&w, &sigma2, tau2)?;
    mixture_cdf(&mix, x, eps)
}

/// Mixture CDF for the constant-weight (effective-sample-size) statistic at
/// heterogeneity `tau2`, evaluated at `x`.
///
/// The per-study sampling variances are either the observed conditional
/// estimates or the model-implied unconditional values at the weighted mean
/// effect — the latter depend on `tau2` themselves, which is what makes this
/// a genuine profile over the heterogeneity parameter.
pub fn ess_mixture_cdf(
    estimates: &[EffectEstimate],
    tau2: f64,
    mode: VarianceMode,
    x: f64,
    eps: f64,
) -> Result<f64> {
    let w = qstat::weights(estimates, WeightScheme::EffectiveSampleSize)?;
    let sigma2: Vec<f64> = match mode {
        VarianceMode::Conditional => estimates.iter().map(|e| e.v2).collect(),
        VarianceMode::Unconditional => {
            check_unconditional_df(estimates)?;
            let delta_hat = qstat::ess_weighted_mean(estimates);
            estimates
                .iter()
                .map(|e| crate::effects::var_g_unconditional(delta_hat, tau2, e.df(), e.n_tilde()))
                .collect()
        }
    };
    let mix = mixture_from_q(&w, &sigma2, tau2)?;
    mixture_cdf(&mix, x, eps)
}

/// The unconditional variance formula divides by `m - 2`; every study must
/// bring more than two degrees of freedom.
pub(crate) fn check_unconditional_df(estimates: &[EffectEstimate]) -> Result<()> {
    for (i, e) in estimates.iter().enumerate() {
        if e.df() <= 2.0 {
            return Err(Error::Validation(format!(
                "study {i} has {} degrees of freedom; unconditional variances need more than 2 \
                 (at least 5 subjects per study)",
                e.df()
            )));
        }
    }
    Ok(())
}

//! Weighted heterogeneity statistics.
//!
//! For effects `g_1..g_K` with positive weights `w_i`, the statistic is
//!
//! ```text
//! Q = sum_i w_i * (g_i - gbar_w)^2,    gbar_w = sum_i w_i g_i / W,
//! ```
//!
//! with `W = sum w_i`. Two weightings matter here: inverse-variance weights
//! `1/v2_i` (the usual choice, with estimated weights that are random), and
//! constant weights equal to the effective sample sizes `ntilde_i`, which are
//! fixed by design and keep the distribution theory clean.
//!
//! `Q` is the quadratic form `g' A g` in the centering matrix
//! `A = W * (diag(q) - q q')` with `q_i = w_i / W`; `A` is positive
//! semidefinite with rank `K - 1` and annihilates constant vectors. Its first
//! moment under independent effects with variances `sigma2_i + tau2` is
//!
//! ```text
//! E(Q) = W * sum_i q_i (1 - q_i) (sigma2_i + tau2) = trace(A * Sigma).
//! ```
//!
//! A heterogeneity-indexed variant `q_generalized` reweights by
//! `1/(v2_i + tau2)` and drives several of the estimators and intervals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::effects::EffectEstimate;
use crate::error::{Error, Result};

/// Which weights go into the heterogeneity statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Constant weights: the effective sample sizes `ntilde_i`.
    EffectiveSampleSize,
    /// Estimated inverse-variance weights `1/v2_i`.
    InverseVariance,
}

/// A computed heterogeneity statistic together with its ingredients.
#[derive(Clone, Debug, PartialEq)]
pub struct QValue {
    pub value: f64,
    pub weighted_mean: f64,
    pub weights: Vec<f64>,
    pub scheme: WeightScheme,
}

/// The weight vector for a scheme. Fails if any inverse-variance weight is
/// unusable (nonpositive or nonfinite `v2`).
pub fn weights(estimates: &[EffectEstimate], scheme: WeightScheme) -> Result<Vec<f64>> {
    check_k(estimates.len())?;
    match scheme {
        WeightScheme::EffectiveSampleSize => Ok(estimates.iter().map(|e| e.n_tilde()).collect()),
        WeightScheme::InverseVariance => estimates
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.v2.is_finite() && e.v2 > 0.0 {
                    Ok(1.0 / e.v2)
                } else {
                    Err(Error::DegenerateStudy(format!(
                        "study {i}: variance {} cannot be inverted",
                        e.v2
                    )))
                }
            })
            .collect(),
    }
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::TooFewStudies { k });
    }
    Ok(())
}

fn check_weights(effects: &[f64], w: &[f64]) -> Result<()> {
    check_k(effects.len())?;
    if effects.len() != w.len() {
        return Err(Error::Validation(format!(
            "{} effects but {} weights",
            effects.len(),
            w.len()
        )));
    }
    for (i, &wi) in w.iter().enumerate() {
        if !wi.is_finite() || wi <= 0.0 {
            return Err(Error::Validation(format!("weight {i} must be positive, got {wi}")));
        }
    }
    Ok(())
}

/// The weighted heterogeneity statistic and the weighted mean it centers on.
pub fn q_weighted(effects: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    check_weights(effects, w)?;
    let total: f64 = w.iter().sum();
    let mean: f64 = effects.iter().zip(w).map(|(g, wi)| g * wi).sum::<f64>() / total;
    let q: f64 = effects
        .iter()
        .zip(w)
        .map(|(g, wi)| wi * (g - mean) * (g - mean))
        .sum();
    Ok((q, mean))
}

/// Constant-weight statistic: weights are the effective sample sizes.
pub fn q_f(estimates: &[EffectEstimate]) -> Result<QValue> {
    q_with_scheme(estimates, WeightScheme::EffectiveSampleSize)
}

/// Inverse-variance statistic with estimated weights `1/v2_i`.
pub fn q_iv(estimates: &[EffectEstimate]) -> Result<QValue> {
    q_with_scheme(estimates, WeightScheme::InverseVariance)
}

/// The statistic under a chosen weight scheme.
pub fn q_with_scheme(estimates: &[EffectEstimate], scheme: WeightScheme) -> Result<QValue> {
    let w = weights(estimates, scheme)?;
    let effects: Vec<f64> = estimates.iter().map(|e| e.g).collect();
    let (value, weighted_mean) = q_weighted(&effects, &w)?;
    Ok(QValue {
        value,
        weighted_mean,
        weights: w,
        scheme,
    })
}

/// The centering matrix `A = W * (diag(q) - q q')`, so that `Q = g' A g`.
///
/// Symmetric, positive semidefinite, rank `K - 1`, with zero row sums.
pub fn centering_matrix(w: &[f64]) -> DMatrix<f64> {
    let total: f64 = w.iter().sum();
    let k = w.len();
    DMatrix::from_fn(k, k, |i, j| {
        let off = -w[i] * w[j] / total;
        if i == j {
            w[i] + off
        } else {
            off
        }
    })
}

/// First moment of `Q` for fixed weights when the effects are independent
/// with variances `sigma2_i + tau2`:
/// `W * sum_i q_i (1 - q_i) (sigma2_i + tau2)`.
pub fn expected_q(w: &[f64], sigma2: &[f64], tau2: f64) -> f64 {
    debug_assert_eq!(w.len(), sigma2.len());
    let total: f64 = w.iter().sum();
    w.iter()
        .zip(sigma2)
        .map(|(&wi, &s2)| {
            let q = wi / total;
            total * q * (1.0 - q) * (s2 + tau2)
        })
        .sum()
}

/// Weighted mean of the effects with effective-sample-size weights; the
/// plug-in overall effect used by the constant-weight methods.
pub fn ess_weighted_mean(estimates: &[EffectEstimate]) -> f64 {
    let wsum: f64 = estimates.iter().map(|e| e.n_tilde()).sum();
    estimates.iter().map(|e| e.n_tilde() * e.g).sum::<f64>() / wsum
}

/// Heterogeneity-indexed statistic with weights `1/(v2_i + tau2)`:
/// nonincreasing in `tau2`, equal to the inverse-variance `Q` at `tau2 = 0`.
pub fn q_generalized(estimates: &[EffectEstimate], tau2: f64) -> f64 {
    debug_assert!(tau2 >= 0.0);
    let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.v2 + tau2)).collect();
    let total: f64 = w.iter().sum();
    let mean: f64 = estimates
        .iter()
        .zip(&w)
        .map(|(e, wi)| e.g * wi)
        .sum::<f64>()
        / total;
    estimates
        .iter()
        .zip(&w)
        .map(|(e, wi)| wi * (e.g - mean) * (e.g - mean))
        .sum()
}

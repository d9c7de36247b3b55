//! Gauss quadrature rules via the Golub-Welsch eigenvalue method.
//!
//! Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix of the
//! orthogonal polynomial family; weights come from the first components of the
//! eigenvectors. Only the two families needed here are provided: Hermite
//! (weight `exp(-x^2)` on the whole line) and Legendre (weight 1 on [-1, 1]).

use nalgebra::DMatrix;
use std::sync::OnceLock;

/// A quadrature rule: `integral f(x) w(x) dx ~= sum_j weights[j] * f(nodes[j])`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(offdiag: &[f64], moment0: f64) -> GaussRule {
    let n = offdiag.len() + 1;
    let mut jac = DMatrix::zeros(n, n);
    for (k, &b) in offdiag.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let first = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], moment0 * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// n-point Gauss-Hermite rule for the weight `exp(-x^2)`.
pub fn hermite(n: usize) -> GaussRule {
    assert!(n >= 1);
    let offdiag: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(&offdiag, std::f64::consts::PI.sqrt())
}

/// n-point Gauss-Legendre rule on [-1, 1].
pub fn legendre(n: usize) -> GaussRule {
    assert!(n >= 1);
    let offdiag: Vec<f64> = (1..n)
        .map(|k| {
            let kf = k as f64;
            kf / (4.0 * kf * kf - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&offdiag, 2.0)
}

/// Shared Hermite rule sized for the moment integrals in this crate.
pub fn hermite_default() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| hermite(48))
}

/// Shared Legendre rule sized for the moment integrals in this crate.
pub fn legendre_default() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| legendre(96))
}

//! Scalar root bracketing and unimodal maximization used by the estimators.

use crate::error::{Error, Result};

/// Bisection for a sign change of `f` on `[lo, hi]` to absolute x-tolerance
/// `tol`. The endpoint values are supplied by the caller, which usually has
/// them already and avoids re-evaluating an expensive `f`.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, f_lo: f64, f_hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numeric(format!(
            "no sign change on [{lo}, {hi}]: f(lo)={f_lo:.6e}, f(hi)={f_hi:.6e}"
        )));
    }
    let mut f_lo = f_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol {
            return Ok(mid);
        }
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Finds `x` in `[lo, hi]` with `f(x) = target` for monotone `f`, evaluating
/// the endpoints itself. Returns an error if the bracket does not straddle.
pub fn invert_monotone<F>(mut f: F, target: f64, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let f_lo = f(lo)? - target;
    let f_hi = f(hi)? - target;
    bisect(|x| Ok(f(x)? - target), lo, hi, f_lo, f_hi, tol)
}

/// Root of a nonincreasing `f` on `[0, inf)` with `f(0) = f0 > 0` supplied by
/// the caller: the bracket grows geometrically from `start_hi` until the sign
/// flips, then bisects. Errors if no sign change appears within sixty
/// doublings.
pub fn solve_decreasing<F>(mut f: F, f0: f64, start_hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut hi = start_hi.max(tol);
    let mut f_hi = f(hi)?;
    let mut growth = 0;
    while f_hi > 0.0 {
        growth += 1;
        if growth > 60 {
            return Err(Error::Numeric(format!(
                "no sign change up to x = {hi:.3e} (objective still {f_hi:.3e})"
            )));
        }
        hi *= 2.0;
        f_hi = f(hi)?;
    }
    bisect(f, 0.0, hi, f0, f_hi, tol)
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Returns the located maximizer and its value.
pub fn golden_max<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..300 {
        if hi - lo <= tol {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let mid = 0.5 * (lo + hi);
    Ok((mid, f(mid)?))
}

//! F and normal quantiles.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

const F_QUANTILE_ATOL: f64 = 1e-8;

/// CDF of the F(d1, d2) distribution via the regularized incomplete beta.
pub fn f_cdf(d1: usize, d2: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (a, b) = (d1 as f64, d2 as f64);
    let u = a * x / (a * x + b);
    beta_reg(a / 2.0, b / 2.0, u)
}

/// Inverse CDF of F(d1, d2) by bisection to absolute tolerance 1e-8.
pub fn f_quantile(d1: usize, d2: usize, p: f64) -> Result<f64> {
    if d1 < 1 || d2 < 1 {
        return Err(Error::InvalidParameter(format!(
            "F degrees of freedom must be positive, got ({d1}, {d2})"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f_cdf(d1, d2, hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "F quantile at p = {p} overflows"
            )));
        }
    }
    while hi - lo > F_QUANTILE_ATOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f_cdf(d1, d2, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal parameters are valid");
    Ok(n.inverse_cdf(p))
}

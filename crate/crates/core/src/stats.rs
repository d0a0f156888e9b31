//! Scalar distribution kernels: standard normal and chi-square.

use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};

pub fn normal_cdf(x: f64) -> f64 {
    // erfc(z) = Q(1/2, z²) is more accurate here than statrs' erfc series
    if x.is_nan() {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let half_sq = 0.5 * x * x;
    if x < 0.0 {
        0.5 * gamma_ur(0.5, half_sq)
    } else {
        0.5 + 0.5 * gamma_lr(0.5, half_sq)
    }
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(0.5 * df, 0.5 * x)
    }
}

/// Upper tail probability P(X > x) for X ~ chi-square(df).
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(0.5 * df, 0.5 * x)
    }
}

/// Upper `alpha` quantile: the point with `chi2_sf(x, df) == alpha`.
pub fn chi2_upper_quantile(alpha: f64, df: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "level must lie in (0, 1), got {alpha}"
        )));
    }
    if !(df > 0.0) {
        return Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {df}"
        )));
    }
    // bracket, then bisect; sf is strictly decreasing
    let mut lo = 0.0;
    let mut hi = df.max(1.0);
    while chi2_sf(hi, df) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        x = 0.5 * (lo + hi);
        if chi2_sf(x, df) > alpha {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Pairwise (cascade) summation; the grouping depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

//! Standard normal distribution helpers.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of [`cdf`] on (0, 1).
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Blom plotting positions `quantile((i - 3/8) / (m + 1/4))`, i = 1..=m.
pub fn blom_scores(m: usize) -> Vec<f64> {
    let denom = m as f64 + 0.25;
    (1..=m)
        .map(|i| quantile((i as f64 - 0.375) / denom))
        .collect()
}

//! Shapiro–Wilk and Shapiro–Francia statistics.
//!
//! Both are squared correlations between the ordered sample and a fixed
//! coefficient vector `a` with `sum(a) = 0`, `sum(a^2) = 1`:
//!
//! ```text
//! T = (sum_i a_i y_(i))^2 / sum_i (y_i - mean(y))^2
//! ```
//!
//! Shapiro–Wilk uses Royston's polynomial approximation of the coefficients and
//! his normalizing transform of `ln(1 - W)` for p-values (m >= 12).
//! Shapiro–Francia uses normalized Blom scores and Royston's log-normal
//! approximation.

use super::{normal, null_table};
use super::Sample;

/// Royston's approximate Shapiro–Wilk coefficients for sample size `m`,
/// ascending (the first half negative).
pub fn sw_coefficients(m: usize) -> Vec<f64> {
    assert!(m >= 6, "Shapiro-Wilk coefficients need m >= 6");
    let scores = normal::blom_scores(m);
    let ssq: f64 = scores.iter().map(|s| s * s).sum();
    let u = 1.0 / (m as f64).sqrt();
    let top = scores[m - 1];
    let next = scores[m - 2];

    let a_n = top / ssq.sqrt() + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
    let a_n1 =
        next / ssq.sqrt() + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
    let phi = (ssq - 2.0 * top * top - 2.0 * next * next) / (1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1);
    let scale = phi.sqrt();

    let mut a: Vec<f64> = scores.iter().map(|s| s / scale).collect();
    a[m - 1] = a_n;
    a[m - 2] = a_n1;
    a[0] = -a_n;
    a[1] = -a_n1;
    a
}

/// Normalized Blom scores.
pub fn sf_coefficients(m: usize) -> Vec<f64> {
    let scores = normal::blom_scores(m);
    let norm = scores.iter().map(|s| s * s).sum::<f64>().sqrt();
    scores.into_iter().map(|s| s / norm).collect()
}

fn poly(coefs: &[f64], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Statistic and its gradient with respect to the sample (original order).
pub(crate) fn correlation_stat(sample: &Sample, coefs: &[f64], with_grad: bool) -> (f64, Option<Vec<f64>>) {
    let y = sample.values();
    let order = sample.order();
    let mean = sample.mean();
    let ss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let lin: f64 = order.iter().zip(coefs).map(|(&i, a)| a * y[i]).sum();
    let stat = lin * lin / ss;
    if !with_grad {
        return (stat, None);
    }
    // dT/dy_(i) = 2 lin a_i / ss - 2 T (y_(i) - mean) / ss
    let mut grad = vec![0.0; y.len()];
    for (&i, a) in order.iter().zip(coefs) {
        grad[i] = 2.0 * (lin * a - stat * (y[i] - mean)) / ss;
    }
    (stat, Some(grad))
}

/// Royston's normalizing transform for W, valid for 12 <= m <= 5000.
pub fn sw_pvalue(w: f64, m: usize) -> f64 {
    let u = (m as f64).ln();
    let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], u);
    let sigma = poly(&[-0.4803, -0.082676, 0.0030302], u).exp();
    upper_tail_of_log_complement(w, mu, sigma)
}

/// Royston's log-normal standardization of the Shapiro–Francia W'.
pub fn sf_z(w: f64, m: usize) -> f64 {
    let u = (m as f64).ln();
    let v = u.ln();
    let mu = -1.2725 + 1.0521 * (v - u);
    let sigma = 1.0308 - 0.26758 * (v + 2.0 / u);
    ((1.0 - w).ln() - mu) / sigma
}

/// Upper-tail probability of `sf_z` under the simulated null. Royston's normal
/// tail for z drifts by up to 0.015 in p above the median.
pub fn sf_pvalue(w: f64, m: usize) -> f64 {
    if 1.0 - w <= 0.0 {
        return 1.0;
    }
    null_table::shapiro_francia().pvalue(sf_z(w, m), m)
}

fn upper_tail_of_log_complement(w: f64, mu: f64, sigma: f64) -> f64 {
    let tail = 1.0 - w;
    if tail <= 0.0 {
        return 1.0;
    }
    normal::sf((tail.ln() - mu) / sigma).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_are_centered_unit_vectors() {
        for m in [12, 20, 64, 500] {
            for a in [sw_coefficients(m), sf_coefficients(m)] {
                let sum: f64 = a.iter().sum();
                let ssq: f64 = a.iter().map(|x| x * x).sum();
                assert!(sum.abs() < 1e-12, "m={m} sum={sum}");
                assert!((ssq - 1.0).abs() < 1e-12, "m={m} ssq={ssq}");
                assert!(a.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn perfect_fit_has_pvalue_one() {
        assert_eq!(sw_pvalue(1.0, 64), 1.0);
        assert_eq!(sf_pvalue(1.0, 64), 1.0);
    }

    #[test]
    fn pvalue_increases_with_w() {
        let ws = [0.85, 0.9, 0.95, 0.98, 0.99];
        for f in [sw_pvalue, sf_pvalue] {
            let p: Vec<f64> = ws.iter().map(|&w| f(w, 64)).collect();
            assert!(p.windows(2).all(|w| w[0] < w[1]), "{p:?}");
        }
    }
}

//! One-sample Kolmogorov–Smirnov test against Uniform(0, 1).
//!
//! The p-value uses the exact distribution of D_n (Marsaglia, Tsang and Wang,
//! 2003) while the matrix stays small, and the Kolmogorov limit with Stephens'
//! finite-sample correction otherwise (there the p-value is far below any
//! practical threshold).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::{TestKind, TestResult};

/// Largest `k = floor(n d) + 1` handled by the exact recursion.
const MAX_EXACT_K: usize = 80;

pub fn ks_uniformity(pvalues: &[f64]) -> Result<TestResult> {
    if pvalues.is_empty() {
        return Err(Error::EmptyInput("KS uniformity needs at least one p-value"));
    }
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidSample(format!("p-value {bad} outside [0, 1]")));
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / nf - x).max(x - i as f64 / nf))
        .fold(0.0, f64::max);
    Ok(TestResult {
        kind: TestKind::KsUnif,
        statistic: d,
        pvalue: kolmogorov_pvalue(n, d),
        m: n,
    })
}

/// P(D_n >= d) for the two-sided one-sample statistic.
pub fn kolmogorov_pvalue(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    if d >= 1.0 {
        return 0.0;
    }
    let k = (n as f64 * d).floor() as usize + 1;
    let p = if k <= MAX_EXACT_K {
        1.0 - exact_cdf(n, d)
    } else {
        let sn = (n as f64).sqrt();
        kolmogorov_limit_sf((sn + 0.12 + 0.11 / sn) * d)
    };
    p.clamp(0.0, 1.0)
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_limit_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * x * x).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    2.0 * sum
}

/// P(D_n < d), Marsaglia–Tsang–Wang recursion with decimal exponent tracking.
fn exact_cdf(n: usize, d: f64) -> f64 {
    let nd = n as f64 * d;
    let k = nd.floor() as usize + 1;
    let m = 2 * k - 1;
    let h = k as f64 - nd;

    let mut hm = DMatrix::<f64>::from_fn(m, m, |i, j| if i + 1 >= j { 1.0 } else { 0.0 });
    for i in 0..m {
        hm[(i, 0)] -= h.powi(i as i32 + 1);
        hm[(m - 1, i)] -= h.powi((m - i) as i32);
    }
    if 2.0 * h - 1.0 > 0.0 {
        hm[(m - 1, 0)] += (2.0 * h - 1.0).powi(m as i32);
    }
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                for g in 1..=(i + 1 - j) {
                    hm[(i, j)] /= g as f64;
                }
            }
        }
    }
    let (q, mut exponent) = matrix_power(&hm, n, k - 1);
    let mut s = q[(k - 1, k - 1)];
    for i in 1..=n {
        s = s * i as f64 / n as f64;
        if s < 1e-140 {
            s *= 1e140;
            exponent -= 140;
        }
    }
    s * 10f64.powi(exponent)
}

fn matrix_power(a: &DMatrix<f64>, n: usize, centre: usize) -> (DMatrix<f64>, i32) {
    if n == 1 {
        return (a.clone(), 0);
    }
    let (half, e_half) = matrix_power(a, n / 2, centre);
    let mut b = &half * &half;
    let mut e = 2 * e_half;
    if n % 2 == 1 {
        b = a * b;
    }
    if b[(centre, centre)] > 1e140 {
        b *= 1e-140;
        e += 140;
    }
    (b, e)
}

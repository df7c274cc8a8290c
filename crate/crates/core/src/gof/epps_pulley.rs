//! Epps–Pulley empirical characteristic function statistic with weight
//! parameter β = 1:
//!
//! ```text
//! T = 1/m sum_jk exp(-(z_j - z_k)^2 / 2) - sqrt(2) sum_j exp(-z_j^2 / 4) + m / sqrt(3)
//! ```

use std::f64::consts::SQRT_2;

use super::Studentized;

pub(crate) fn epps_pulley(st: &Studentized, with_grad: bool) -> (f64, Option<Vec<f64>>) {
    let z = &st.z;
    let n = z.len();
    let nf = n as f64;
    let mut pair_sum = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; n]);
    for j in 0..n {
        // diagonal terms contribute exp(0) = 1
        pair_sum += 1.0;
        for k in (j + 1)..n {
            let diff = z[j] - z[k];
            let e = (-0.5 * diff * diff).exp();
            pair_sum += 2.0 * e;
            if let Some(g) = grad.as_mut() {
                let t = 2.0 * diff * e / nf;
                g[j] -= t;
                g[k] += t;
            }
        }
    }
    let mut single = 0.0;
    for (j, &zj) in z.iter().enumerate() {
        let e = (-0.25 * zj * zj).exp();
        single += e;
        if let Some(g) = grad.as_mut() {
            g[j] += 0.5 * SQRT_2 * zj * e;
        }
    }
    let stat = pair_sum / nf - SQRT_2 * single + nf / 3f64.sqrt();
    (stat, grad)
}

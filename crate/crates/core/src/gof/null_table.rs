//! Monte Carlo null distributions for statistics without a usable closed-form
//! p-value (Lilliefors D, Epps–Pulley T, and the standardized Shapiro–Francia z).
//!
//! Each table stores quantiles of the statistic at fixed probability levels for
//! a grid of sample sizes. The tables were simulated with
//! `tools/gen_null_tables.py` (10^6 replicates per size for Lilliefors; 10^6 up
//! to m = 64 and 2·10^5 above for Epps–Pulley; 10^6 up to m = 256 and 2·10^5
//! above for Shapiro–Francia). Between grid sizes the
//! quantiles of `scale(m) · T` are interpolated linearly in `1/sqrt(m)`; above
//! the grid the largest row is reused in the same scaled form.

use std::sync::OnceLock;

#[derive(Debug)]
pub struct NullTable {
    levels: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
    sqrt_scaled: bool,
}

static LILLIEFORS: OnceLock<NullTable> = OnceLock::new();
static EPPS_PULLEY: OnceLock<NullTable> = OnceLock::new();
static SHAPIRO_FRANCIA: OnceLock<NullTable> = OnceLock::new();

pub fn lilliefors() -> &'static NullTable {
    LILLIEFORS.get_or_init(|| {
        NullTable::parse(include_str!("../../data/lilliefors_null.csv"), true)
            .expect("embedded Lilliefors table is well formed")
    })
}

pub fn epps_pulley() -> &'static NullTable {
    EPPS_PULLEY.get_or_init(|| {
        NullTable::parse(include_str!("../../data/epps_pulley_null.csv"), false)
            .expect("embedded Epps-Pulley table is well formed")
    })
}

pub fn shapiro_francia() -> &'static NullTable {
    SHAPIRO_FRANCIA.get_or_init(|| {
        NullTable::parse(include_str!("../../data/shapiro_francia_null.csv"), false)
            .expect("embedded Shapiro-Francia table is well formed")
    })
}

impl NullTable {
    pub fn parse(text: &str, sqrt_scaled: bool) -> Result<Self, String> {
        let mut levels = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let head = fields.next().unwrap_or_default();
            let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| format!("line {}: {e}", lineno + 1))?;
            if head == "levels" {
                levels = Some(values);
            } else {
                let m = head
                    .parse::<usize>()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                rows.push((m, values));
            }
        }
        let levels = levels.ok_or("missing levels row")?;
        if rows.is_empty() {
            return Err("no table rows".into());
        }
        for (m, q) in &rows {
            if q.len() != levels.len() {
                return Err(format!("row m={m} has {} quantiles, expected {}", q.len(), levels.len()));
            }
        }
        rows.sort_by_key(|(m, _)| *m);
        Ok(NullTable {
            levels,
            rows,
            sqrt_scaled,
        })
    }

    pub fn min_size(&self) -> usize {
        self.rows[0].0
    }

    pub fn max_size(&self) -> usize {
        self.rows[self.rows.len() - 1].0
    }

    fn scale(&self, m: usize) -> f64 {
        if self.sqrt_scaled {
            (m as f64).sqrt()
        } else {
            1.0
        }
    }

    /// Null quantiles for sample size `m`.
    pub fn quantiles(&self, m: usize) -> Vec<f64> {
        let pos = self.rows.partition_point(|(size, _)| *size < m);
        if pos < self.rows.len() && self.rows[pos].0 == m {
            return self.rows[pos].1.clone();
        }
        let target = self.scale(m);
        if pos == self.rows.len() || pos == 0 {
            let (size, q) = if pos == 0 { &self.rows[0] } else { &self.rows[pos - 1] };
            let s = self.scale(*size);
            return q.iter().map(|v| v * s / target).collect();
        }
        let (lo_m, lo_q) = &self.rows[pos - 1];
        let (hi_m, hi_q) = &self.rows[pos];
        let x = 1.0 / (m as f64).sqrt();
        let x_lo = 1.0 / (*lo_m as f64).sqrt();
        let x_hi = 1.0 / (*hi_m as f64).sqrt();
        let t = (x - x_hi) / (x_lo - x_hi);
        let (s_lo, s_hi) = (self.scale(*lo_m), self.scale(*hi_m));
        lo_q.iter()
            .zip(hi_q)
            .map(|(a, b)| (t * a * s_lo + (1.0 - t) * b * s_hi) / target)
            .collect()
    }

    /// Upper-tail probability of `stat` under the null at sample size `m`.
    pub fn pvalue(&self, stat: f64, m: usize) -> f64 {
        let q = self.quantiles(m);
        let lv = &self.levels;
        let last = q.len() - 1;
        if stat <= q[0] {
            let frac = if q[0] > 0.0 { (stat / q[0]).clamp(0.0, 1.0) } else { 0.0 };
            return 1.0 - lv[0] * frac;
        }
        if stat >= q[last] {
            let p_last = 1.0 - lv[last];
            let p_prev = 1.0 - lv[last - 1];
            let width = q[last] - q[last - 1];
            if width <= 0.0 {
                return p_last;
            }
            let rate = (p_prev / p_last).ln() / width;
            return (p_last * (-rate * (stat - q[last])).exp()).clamp(0.0, p_last);
        }
        let j = q.partition_point(|v| *v <= stat) - 1;
        let span = q[j + 1] - q[j];
        let level = if span > 0.0 {
            lv[j] + (lv[j + 1] - lv[j]) * (stat - q[j]) / span
        } else {
            lv[j + 1]
        };
        (1.0 - level).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "# toy\nlevels,0.1,0.5,0.9,0.99\n10,1.0,2.0,3.0,4.0\n40,0.5,1.0,1.5,2.0\n";

    #[test]
    fn interpolates_levels() {
        let t = NullTable::parse(TOY, false).unwrap();
        assert!((t.pvalue(2.0, 10) - 0.5).abs() < 1e-12);
        assert!((t.pvalue(2.5, 10) - 0.3).abs() < 1e-12);
        assert!((t.pvalue(0.5, 10) - 0.95).abs() < 1e-12);
        // exponential tail beyond the last quantile
        let p = t.pvalue(5.0, 10);
        assert!(p < 0.01 && p > 0.0);
        assert!((p - 0.01 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn interpolates_sizes_in_inverse_sqrt() {
        let t = NullTable::parse(TOY, true).unwrap();
        // for m between grid sizes the scaled quantiles lie between the rows'
        let q = t.quantiles(20);
        let s20 = 20f64.sqrt();
        let (s10, s40) = (10f64.sqrt(), 40f64.sqrt());
        for j in 0..4 {
            let scaled = q[j] * s20;
            let a = [1.0, 2.0, 3.0, 4.0][j] * s10;
            let b = [0.5, 1.0, 1.5, 2.0][j] * s40;
            assert!(scaled >= a.min(b) - 1e-12 && scaled <= a.max(b) + 1e-12);
        }
        assert_eq!(t.quantiles(40), vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn embedded_tables_load() {
        for t in [lilliefors(), epps_pulley(), shapiro_francia()] {
            assert!(t.min_size() <= 8);
            for (_, q) in &t.rows {
                assert!(q.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}

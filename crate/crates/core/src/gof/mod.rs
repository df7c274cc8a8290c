//! Univariate goodness-of-fit tests for normality.
//!
//! Every test here is composite: location and scale are estimated from the
//! sample, so statistics are invariant under `y -> a y + b` for `a > 0`.
//! Statistics are differentiable almost everywhere in the sample; gradients
//! hold the sort permutation (and, for Lilliefors, the index achieving the
//! supremum) fixed. Ties are broken by a stable ascending sort.
//!
//! Shapiro–Wilk and Shapiro–Francia reject for small values, the others for
//! large values.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod edf;
mod epps_pulley;
pub mod normal;
pub mod null_table;
pub mod shapiro;
mod uniformity;

pub use uniformity::{kolmogorov_pvalue, ks_uniformity};

/// Samples with variance below this are rejected as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-24;

/// Gradient norms above this are flagged as near the singular set.
pub const DEFAULT_SINGULARITY_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    /// Shapiro–Wilk (Royston approximation).
    #[serde(rename = "SW", alias = "sw")]
    Sw,
    /// Shapiro–Francia.
    #[serde(rename = "SF", alias = "sf")]
    Sf,
    /// Cramér–von Mises, composite.
    #[serde(rename = "CVM", alias = "cvm")]
    Cvm,
    /// Lilliefors (Kolmogorov–Smirnov with estimated parameters).
    #[serde(rename = "KS", alias = "ks")]
    Ks,
    /// Epps–Pulley, β = 1.
    #[serde(rename = "EP", alias = "ep")]
    Ep,
    /// Kolmogorov–Smirnov against Uniform(0, 1); used on p-values.
    #[serde(rename = "KSUnif", alias = "ksunif")]
    KsUnif,
}

impl TestKind {
    pub const NORMALITY: [TestKind; 5] = [TestKind::Sw, TestKind::Sf, TestKind::Cvm, TestKind::Ks, TestKind::Ep];

    pub fn tag(self) -> &'static str {
        match self {
            TestKind::Sw => "SW",
            TestKind::Sf => "SF",
            TestKind::Cvm => "CVM",
            TestKind::Ks => "KS",
            TestKind::Ep => "EP",
            TestKind::KsUnif => "KSUnif",
        }
    }

    /// True when small statistic values are evidence against the null.
    pub fn rejects_small(self) -> bool {
        matches!(self, TestKind::Sw | TestKind::Sf)
    }

    /// Sign of the statistic term in the training loss: the loss adds
    /// `sign * lambda * T`, so tests that reject small values are maximized.
    pub fn loss_sign(self) -> f64 {
        if self.rejects_small() {
            -1.0
        } else {
            1.0
        }
    }

    /// Sample sizes for which the p-value approximation is valid.
    pub fn size_range(self) -> (usize, usize) {
        match self {
            TestKind::Sw => (12, 2000),
            TestKind::Sf => (5, 5000),
            TestKind::Cvm => (8, 1_000_000),
            TestKind::Ks => (null_table::lilliefors().min_size(), 1_000_000),
            TestKind::Ep => (null_table::epps_pulley().min_size(), 2000),
            TestKind::KsUnif => (1, usize::MAX),
        }
    }

    pub fn check_size(self, m: usize) -> Result<()> {
        let (min, max) = self.size_range();
        if m < min || m > max {
            return Err(Error::UnsupportedSize { kind: self, m, min, max });
        }
        Ok(())
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sw" => Ok(TestKind::Sw),
            "sf" => Ok(TestKind::Sf),
            "cvm" => Ok(TestKind::Cvm),
            "ks" => Ok(TestKind::Ks),
            "ep" => Ok(TestKind::Ep),
            "ksunif" => Ok(TestKind::KsUnif),
            other => Err(Error::InvalidConfig(format!("unknown test kind {other:?}"))),
        }
    }
}

/// A validated batch of scalars: at least three finite values with nonzero
/// variance. The stable ascending sort order is computed once.
#[derive(Debug, Clone)]
pub struct Sample {
    values: Vec<f64>,
    order: Vec<usize>,
    mean: f64,
    variance: f64,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let m = values.len();
        if m < 3 {
            return Err(Error::InvalidSample(format!("need at least 3 values, got {m}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("value {i} is not finite")));
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
        if !(variance >= DEGENERATE_VARIANCE) {
            return Err(Error::DegenerateSample {
                variance,
                threshold: DEGENERATE_VARIANCE,
            });
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        Ok(Sample {
            values,
            order,
            mean,
            variance,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices that sort the sample ascending (stable).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased (m - 1 denominator) variance.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Standardized values `(y - mean) / s` with the m - 1 standard deviation.
pub(crate) struct Studentized {
    pub z: Vec<f64>,
    pub s: f64,
}

impl Studentized {
    fn new(sample: &Sample) -> Self {
        let s = sample.variance.sqrt();
        let z = sample.values.iter().map(|v| (v - sample.mean) / s).collect();
        Studentized { z, s }
    }

    /// Maps `dT/dz` to `dT/dy`, including the dependence of the mean and the
    /// standard deviation on every entry.
    fn chain(&self, dz: &[f64]) -> Vec<f64> {
        let n = self.z.len() as f64;
        let mean_g = dz.iter().sum::<f64>() / n;
        let gz: f64 = dz.iter().zip(&self.z).map(|(g, z)| g * z).sum();
        dz.iter()
            .zip(&self.z)
            .map(|(g, z)| (g - mean_g - z * gz / (n - 1.0)) / self.s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    #[serde(rename = "stat")]
    pub statistic: f64,
    pub pvalue: f64,
    pub m: usize,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.pvalue < alpha
    }
}

/// Statistic value together with its gradient with respect to the sample.
#[derive(Debug, Clone)]
pub struct StatGradient {
    pub statistic: f64,
    pub gradient: Vec<f64>,
    pub norm: f64,
    pub near_singular: bool,
}

fn statistic_impl(kind: TestKind, sample: &Sample, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    Ok(match kind {
        TestKind::Sw => shapiro::correlation_stat(sample, &shapiro::sw_coefficients(sample.len()), with_grad),
        TestKind::Sf => shapiro::correlation_stat(sample, &shapiro::sf_coefficients(sample.len()), with_grad),
        TestKind::Cvm | TestKind::Ks | TestKind::Ep => {
            let st = Studentized::new(sample);
            let (stat, dz) = match kind {
                TestKind::Cvm => edf::cramer_von_mises(&st, sample.order(), with_grad),
                TestKind::Ks => edf::lilliefors(&st, sample.order(), with_grad),
                _ => epps_pulley::epps_pulley(&st, with_grad),
            };
            (stat, dz.map(|g| st.chain(&g)))
        }
        TestKind::KsUnif => {
            return Err(Error::InvalidConfig(
                "KSUnif is a uniformity test on p-values and has no gradient".into(),
            ))
        }
    })
}

/// Test statistic only, without the p-value or the size check.
pub fn statistic(kind: TestKind, sample: &Sample) -> Result<f64> {
    if kind == TestKind::KsUnif {
        return ks_uniformity(sample.values()).map(|r| r.statistic);
    }
    Ok(statistic_impl(kind, sample, false)?.0)
}

/// p-value of an observed statistic at sample size `m`.
pub fn pvalue(kind: TestKind, stat: f64, m: usize) -> Result<f64> {
    kind.check_size(m)?;
    Ok(match kind {
        TestKind::Sw => shapiro::sw_pvalue(stat, m),
        TestKind::Sf => shapiro::sf_pvalue(stat, m),
        TestKind::Cvm => edf::cvm_pvalue(stat),
        TestKind::Ks => null_table::lilliefors().pvalue(stat, m),
        TestKind::Ep => null_table::epps_pulley().pvalue(stat, m),
        TestKind::KsUnif => kolmogorov_pvalue(m, stat),
    })
}

/// Runs a test on a sample.
pub fn evaluate(kind: TestKind, sample: &Sample) -> Result<TestResult> {
    if kind == TestKind::KsUnif {
        return ks_uniformity(sample.values());
    }
    kind.check_size(sample.len())?;
    let stat = statistic(kind, sample)?;
    Ok(TestResult {
        kind,
        statistic: stat,
        pvalue: pvalue(kind, stat, sample.len())?,
        m: sample.len(),
    })
}

/// `dT/dy_i` for every entry, with the default singularity threshold.
pub fn statistic_gradient(kind: TestKind, sample: &Sample) -> Result<StatGradient> {
    statistic_gradient_with_threshold(kind, sample, DEFAULT_SINGULARITY_THRESHOLD)
}

pub fn statistic_gradient_with_threshold(kind: TestKind, sample: &Sample, threshold: f64) -> Result<StatGradient> {
    let (statistic, gradient) = statistic_impl(kind, sample, true)?;
    let gradient = gradient.expect("gradient requested");
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let near_singular = !(norm <= threshold);
    if near_singular {
        log::warn!("{kind} gradient norm {norm:.3e} exceeds {threshold:.1e}: sample is close to constant");
    }
    Ok(StatGradient {
        statistic,
        gradient,
        norm,
        near_singular,
    })
}

/// Unit vector in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `v`; fails on a zero or non-finite vector.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidSample("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(UnitVector(v.into_iter().map(|x| x / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> Self {
        UnitVector(self.0.iter().map(|x| -x).collect())
    }
}

/// Uniform direction on the unit sphere in R^d.
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> UnitVector {
    assert!(d >= 1, "sphere dimension must be positive");
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Projects the rows of `latent` (m×d) onto `u`.
pub fn project(latent: &DMatrix<f64>, u: &UnitVector) -> Result<Sample> {
    Sample::new(project_values(latent, u)?)
}

pub(crate) fn project_values(latent: &DMatrix<f64>, u: &UnitVector) -> Result<Vec<f64>> {
    if latent.ncols() != u.dim() {
        return Err(Error::dims(
            format!("{} latent columns", u.dim()),
            format!("{}", latent.ncols()),
        ));
    }
    if latent.nrows() < 3 {
        return Err(Error::InvalidSample(format!("need at least 3 rows, got {}", latent.nrows())));
    }
    let u = u.as_slice();
    Ok((0..latent.nrows())
        .map(|i| (0..u.len()).map(|j| latent[(i, j)] * u[j]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normals(m: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn sw_is_one_at_its_coefficients() {
        let a = shapiro::sw_coefficients(64);
        let s = Sample::new(a).unwrap();
        let r = evaluate(TestKind::Sw, &s).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert_eq!(r.pvalue, 1.0);
        let g = statistic_gradient(TestKind::Sw, &s).unwrap();
        assert!(g.norm < 1e-12, "{}", g.norm);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        let err = Sample::new(vec![2.5; 20]).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample { .. }));
    }

    #[test]
    fn too_small_for_shapiro_wilk() {
        let s = Sample::new(normals(10, 1)).unwrap();
        assert!(matches!(
            evaluate(TestKind::Sw, &s),
            Err(Error::UnsupportedSize { m: 10, min: 12, .. })
        ));
        assert!(evaluate(TestKind::Sf, &s).is_ok());
    }

    #[test]
    fn blom_points_look_normal_to_lilliefors() {
        let s = Sample::new(normal::blom_scores(50)).unwrap();
        let r = evaluate(TestKind::Ks, &s).unwrap();
        assert!(r.statistic < 0.05, "{}", r.statistic);
        assert!(r.pvalue > 0.9, "{}", r.pvalue);
    }

    #[test]
    fn kinds_parse_and_print() {
        for k in TestKind::NORMALITY {
            assert_eq!(k.tag().parse::<TestKind>().unwrap(), k);
        }
        assert!("ad".parse::<TestKind>().is_err());
        let json = serde_json::to_string(&TestKind::Cvm).unwrap();
        assert_eq!(json, "\"CVM\"");
    }

    #[test]
    fn rejection_directions() {
        assert!(TestKind::Sw.rejects_small() && TestKind::Sf.rejects_small());
        for k in [TestKind::Cvm, TestKind::Ks, TestKind::Ep] {
            assert!(!k.rejects_small());
            assert_eq!(k.loss_sign(), 1.0);
        }
    }

    #[test]
    fn projection_onto_axis() {
        let latent = DMatrix::<f64>::identity(3, 3);
        let u = UnitVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(project(&latent, &u).unwrap().values(), &[1.0, 0.0, 0.0]);
        let wrong = UnitVector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(project(&latent, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sphere_in_one_dimension_is_a_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = sample_unit_sphere(1, &mut rng);
            assert_eq!(u.as_slice()[0].abs(), 1.0);
        }
    }
}

//! Reconstruction error, latent moments, a Gaussian mutual-information lower
//! bound and covariance spectrum diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Autoencoder;

/// Relative ridge added to covariance blocks before taking determinants.
pub const RIDGE_RELATIVE: f64 = 1e-6;
/// Absolute ridge floor, used when the trace vanishes.
pub const RIDGE_FLOOR: f64 = 1e-12;
/// `σ_min / σ_max` below which a spectrum is flagged degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-6;

pub const DEFAULT_MI_SAMPLES: usize = 10_000;

/// Mean over rows of the squared Euclidean reconstruction error.
pub fn mse<A: Autoencoder + ?Sized>(model: &A, inputs: &DMatrix<f64>) -> Result<f64> {
    if inputs.nrows() == 0 {
        return Err(Error::EmptyInput("mse needs at least one example"));
    }
    let latents = model.encode_latents(inputs)?;
    let recon = model.decode_latents(&latents)?;
    if recon.shape() != inputs.shape() {
        return Err(Error::dims(format!("{:?}", inputs.shape()), format!("{:?}", recon.shape())));
    }
    Ok((recon - inputs).norm_squared() / inputs.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl LatentMoments {
    /// Sample mean and (n−1)-denominator covariance of the rows.
    pub fn from_rows(rows: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = rows.shape();
        if n <= d || n < 2 {
            return Err(Error::InsufficientSamples { needed: d.max(1), got: n });
        }
        let mean = DVector::from_iterator(d, rows.column_iter().map(|c| c.sum() / n as f64));
        let mut centered = rows.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let mut covariance = centered.transpose() * &centered / (n as f64 - 1.0);
        covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(LatentMoments {
            mean,
            covariance,
            count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn latent_moments<A: Autoencoder + ?Sized>(model: &A, inputs: &DMatrix<f64>) -> Result<LatentMoments> {
    LatentMoments::from_rows(&model.encode_latents(inputs)?)
}

fn ridge(block: &DMatrix<f64>) -> f64 {
    (RIDGE_RELATIVE * block.trace() / block.nrows() as f64).max(RIDGE_FLOOR)
}

fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Draws `N(μ̂, Σ̂)` samples through a symmetric eigen square root, which
/// tolerates singular Σ̂.
pub fn sample_gaussian(moments: &LatentMoments, count: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let d = moments.dim();
    let eig = moments.covariance.clone().symmetric_eigen();
    let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let xi: DMatrix<f64> = DMatrix::from_fn(count, d, |_, _| rng.sample(StandardNormal));
    let mut z = xi * sqrt.transpose();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(moments.mean[j]);
    }
    z
}

/// Gaussian mutual information (nats) between `z` and `z̃`, from the joint
/// sample covariance of the paired rows, with a ridge on each block.
pub fn gaussian_mi(z: &DMatrix<f64>, z_tilde: &DMatrix<f64>) -> Result<f64> {
    if z.nrows() != z_tilde.nrows() {
        return Err(Error::dims(format!("{} rows", z.nrows()), z_tilde.nrows()));
    }
    let d1 = z.ncols();
    let d2 = z_tilde.ncols();
    let mut joint_rows = DMatrix::zeros(z.nrows(), d1 + d2);
    joint_rows.columns_mut(0, d1).copy_from(z);
    joint_rows.columns_mut(d1, d2).copy_from(z_tilde);
    let mut joint = LatentMoments::from_rows(&joint_rows)?.covariance;
    let e1 = ridge(&joint.view((0, 0), (d1, d1)).into_owned());
    let e2 = ridge(&joint.view((d1, d1), (d2, d2)).into_owned());
    for i in 0..d1 {
        joint[(i, i)] += e1;
    }
    for i in d1..d1 + d2 {
        joint[(i, i)] += e2;
    }
    let a = log_det_spd(&joint.view((0, 0), (d1, d1)).into_owned());
    let b = log_det_spd(&joint.view((d1, d1), (d2, d2)).into_owned());
    let j = log_det_spd(&joint);
    match (a, b, j) {
        (Some(a), Some(b), Some(j)) => {
            let mi = 0.5 * (a + b - j);
            if mi.is_finite() {
                Ok(mi.max(0.0))
            } else {
                Err(Error::SingularJointCovariance)
            }
        }
        _ => Err(Error::SingularJointCovariance),
    }
}

/// Gaussian MI lower-bound estimate along `z → G_φ(z) → z̃ = F_θ(G_φ(z))`
/// with `z ~ N(μ̂, Σ̂)`.
pub fn mi_lower_bound<A: Autoencoder + ?Sized>(
    model: &A,
    moments: &LatentMoments,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if moments.dim() != model.latent_dim() {
        return Err(Error::dims(format!("{} latent dims", model.latent_dim()), moments.dim()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_gaussian(moments, samples, &mut rng);
    let z_tilde = model.encode_latents(&model.decode_latents(&z)?)?;
    gaussian_mi(&z, &z_tilde)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub singular_values: Vec<f64>,
    pub condition: f64,
    pub degenerate: bool,
}

impl Spectrum {
    /// Number of singular values below `σ_max / ratio`.
    pub fn count_below(&self, ratio: f64) -> usize {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values.iter().filter(|&&s| s < max / ratio).count()
    }
}

pub fn cov_spectrum(moments: &LatentMoments) -> Spectrum {
    spectrum_of(&moments.covariance)
}

pub fn spectrum_of(m: &DMatrix<f64>) -> Spectrum {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    Spectrum {
        condition: max / min.max(1e-300),
        degenerate: !(min / max >= DEGENERACY_RATIO),
        singular_values: sv,
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.len() });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#![allow(dead_code)]

use gofae::gof::{self, Sample, TestKind};
use gofae::nn::{Activation, Batch, ModelParams, Upstream};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(m: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..m).map(|_| r.sample(StandardNormal)).collect()
}

pub fn gaussian_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Max relative error between the analytic statistic gradient and central
/// differences (step `h`), skipping coordinates where the one-sided
/// differences disagree (a kink: a rank swap or a switch of the KS argmax).
pub fn stat_gradient_error(kind: TestKind, y: &[f64], h: f64) -> (f64, usize) {
    let sample = Sample::new(y.to_vec()).unwrap();
    let g = gof::statistic_gradient(kind, &sample).unwrap().gradient;
    let f0 = gof::statistic(kind, &sample).unwrap();
    let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..y.len() {
        let mut plus = y.to_vec();
        plus[i] += h;
        let mut minus = y.to_vec();
        minus[i] -= h;
        let fp = gof::statistic(kind, &Sample::new(plus).unwrap()).unwrap();
        let fm = gof::statistic(kind, &Sample::new(minus).unwrap()).unwrap();
        let right = (fp - f0) / h;
        let left = (f0 - fm) / h;
        if rel_err(right, left, 1e-3 * scale) > 1e-2 {
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max(rel_err(g[i], fd, 1e-6 * scale.max(1e-12)));
        checked += 1;
    }
    (worst, checked)
}

/// Plain-loop copy of the model used as an independent oracle.
#[derive(Clone)]
pub struct RawModel {
    pub enc: Vec<(DMatrix<f64>, Vec<f64>)>,
    pub theta: DMatrix<f64>,
    pub dec: Vec<(DMatrix<f64>, Vec<f64>)>,
    pub act: Activation,
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Tanh => v.tanh(),
        Activation::Relu => v.max(0.0),
        Activation::Identity => v,
    }
}

fn layer(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &[f64], f: Option<Activation>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), w.ncols());
    for i in 0..x.nrows() {
        for j in 0..w.ncols() {
            let mut s = b[j];
            for k in 0..x.ncols() {
                s += x[(i, k)] * w[(k, j)];
            }
            out[(i, j)] = f.map_or(s, |a| act(a, s));
        }
    }
    out
}

impl RawModel {
    pub fn from(p: &ModelParams) -> Self {
        let copy = |l: &gofae::nn::Dense| (l.weights.clone(), l.bias.iter().copied().collect());
        RawModel {
            enc: p.encoder.layers.iter().map(copy).collect(),
            theta: p.theta.matrix().clone(),
            dec: p.decoder.layers.iter().map(copy).collect(),
            act: p.encoder.activation,
        }
    }

    /// (features, latents, reconstruction)
    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut v = x.clone();
        for (w, b) in &self.enc {
            v = layer(&v, w, b, Some(self.act));
        }
        let zero = vec![0.0; self.theta.ncols()];
        let y = layer(&v, &self.theta, &zero, None);
        let mut r = y.clone();
        let n = self.dec.len();
        for (i, (w, b)) in self.dec.iter().enumerate() {
            r = layer(&r, w, b, (i + 1 < n).then_some(self.act));
        }
        (v, y, r)
    }

    /// Mutable views of every scalar parameter, in a fixed order.
    pub fn entries_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        for (w, b) in self.enc.iter_mut() {
            out.extend(w.iter_mut());
            out.extend(b.iter_mut());
        }
        out.extend(self.theta.iter_mut());
        for (w, b) in self.dec.iter_mut() {
            out.extend(w.iter_mut());
            out.extend(b.iter_mut());
        }
        out
    }
}

/// `<gy, Y> + <gx, X̂>`.
pub fn linear_loss(model: &RawModel, x: &DMatrix<f64>, gy: &DMatrix<f64>, gx: &DMatrix<f64>) -> f64 {
    let (_, y, r) = model.forward(x);
    y.component_mul(gy).sum() + r.component_mul(gx).sum()
}

/// Linear encoder `x A` and decoder `z B`.
pub struct LinearStub {
    pub enc: DMatrix<f64>,
    pub dec: DMatrix<f64>,
}

impl gofae::nn::Autoencoder for LinearStub {
    fn latent_dim(&self) -> usize {
        self.enc.ncols()
    }
    fn encode_latents(&self, inputs: &DMatrix<f64>) -> gofae::Result<DMatrix<f64>> {
        Ok(inputs * &self.enc)
    }
    fn decode_latents(&self, latents: &DMatrix<f64>) -> gofae::Result<DMatrix<f64>> {
        Ok(latents * &self.dec)
    }
}

/// Ignores its inputs and emits seeded i.i.d. noise, Gaussian or uniform.
pub struct NoiseStub {
    pub dim: usize,
    pub seed: u64,
    pub uniform: bool,
}

impl gofae::nn::Autoencoder for NoiseStub {
    fn latent_dim(&self) -> usize {
        self.dim
    }
    fn encode_latents(&self, inputs: &DMatrix<f64>) -> gofae::Result<DMatrix<f64>> {
        let mut r = rng(self.seed);
        Ok(if self.uniform {
            DMatrix::from_fn(inputs.nrows(), self.dim, |_, _| r.random::<f64>())
        } else {
            gaussian_matrix(inputs.nrows(), self.dim, &mut r)
        })
    }
    fn decode_latents(&self, latents: &DMatrix<f64>) -> gofae::Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(latents.nrows(), self.dim))
    }
}

/// Worst entrywise relative error of `backward` against central differences
/// of `<gy, Y> + <gx, X̂>`.
pub fn backward_error(params: &ModelParams, x: &DMatrix<f64>, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, d, n) = (x.nrows(), params.latent_dim(), params.input_dim());
    let gy = gaussian_matrix(m, d, &mut r);
    let gx = gaussian_matrix(m, n, &mut r);
    let pass = params.forward(&Batch::new(x.clone()).unwrap()).unwrap();
    let upstream = Upstream {
        latents: Some(gy.clone()),
        reconstruction: Some(gx.clone()),
    };
    let grads = params.backward(&pass, &upstream).unwrap();
    let analytic: Vec<f64> = grads.blocks().concat();

    let base = RawModel::from(params);
    let count = base.clone().entries_mut().len();
    assert_eq!(count, analytic.len());
    let scale = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        *plus.entries_mut()[i] += h;
        let mut minus = base.clone();
        *minus.entries_mut()[i] -= h;
        let fd = (linear_loss(&plus, x, &gy, &gx) - linear_loss(&minus, x, &gy, &gx)) / (2.0 * h);
        worst = worst.max(rel_err(g, fd, 1e-3 * scale));
    }
    worst
}

//! Mini-batch training: Euclidean SGD on the encoder features Ξ and decoder φ
//! using the full loss, and a Riemannian step on Θ driven by the projected
//! statistic, all from the same forward pass.
//!
//! The loss on a batch is
//!
//! ```text
//! L = w · (1/m) Σ |x_i - x̂_i|² + s · λ · T(Y u)
//! ```
//!
//! with `s = -1` for statistics that reject when small (SW, SF) and `s = +1`
//! otherwise, and `u` a fresh uniform direction every iteration.

mod checkpoint;
mod config;

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Schedule, TrainConfig};

use crate::error::{Diagnostics, Error, Result};
use crate::gof::{self, TestResult, UnitVector};
use crate::nn::{Architecture, Batch, Gradients, ModelParams, Upstream};
use crate::stiefel::{rsgd_step, StepDirection};

/// Stream of the parameter-initialization generator.
const INIT_STREAM: u64 = 0;
/// Stream of the projection-direction generator.
const DIRECTION_STREAM: u64 = 1;
/// Epoch `e` shuffles with stream `EPOCH_STREAM_BASE + e`.
const EPOCH_STREAM_BASE: u64 = 2;

/// How often the smallest singular value of centered features is checked.
const RANK_CHECK_EVERY: usize = 100;
const RANK_WARN_BELOW: f64 = 1e-8;

const EMA_ALPHA: f64 = 0.01;

pub const METRICS_HEADER: &str = "iter,recon_mse,stat,pvalue,lambda,eta1,eta2";

fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn init_params(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    ModelParams::init(arch, &mut seeded_stream(seed, INIT_STREAM))
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based iteration that produced this record.
    pub iter: usize,
    pub recon_mse: f64,
    pub stat: f64,
    pub pvalue: f64,
    pub lambda: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub loss: f64,
}

/// Exponential moving averages of the training signals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    pub count: u64,
    pub loss: f64,
    pub recon: f64,
    pub stat: f64,
}

impl RunningStats {
    fn update(&mut self, r: &StepRecord) {
        if self.count == 0 {
            self.loss = r.loss;
            self.recon = r.recon_mse;
            self.stat = r.stat;
        } else {
            self.loss += EMA_ALPHA * (r.loss - self.loss);
            self.recon += EMA_ALPHA * (r.recon_mse - self.recon);
            self.stat += EMA_ALPHA * (r.stat - self.stat);
        }
        self.count += 1;
    }
}

/// Heavy-ball buffers for the Euclidean blocks (encoder then decoder, each
/// layer's weights then bias, in memory order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub velocity: Option<Vec<Vec<f64>>>,
}

fn reconstruction(pass_recon: &DMatrix<f64>, inputs: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let diff = pass_recon - inputs;
    let m = inputs.nrows() as f64;
    (diff.norm_squared() / m, diff)
}

/// Loss value and the test result on the projected latents.
pub fn minibatch_loss(
    params: &ModelParams,
    batch: &Batch,
    config: &TrainConfig,
    u: &UnitVector,
) -> Result<(f64, TestResult)> {
    let enc = params.encode(batch)?;
    let recon = params.decode(&enc.latents)?;
    let (mse, _) = reconstruction(&recon, batch.inputs());
    let result = gof::evaluate(config.test, &gof::project(&enc.latents, u)?)?;
    let loss = config.reconstruction_weight * mse + config.test.loss_sign() * config.lambda * result.statistic;
    Ok((loss, result))
}

fn diagnostics(
    t: usize,
    recon: f64,
    stat: f64,
    params: &ModelParams,
    norms: Vec<(String, f64)>,
    batch: &Batch,
) -> Error {
    Error::NonFiniteLoss(Box::new(Diagnostics {
        iteration: t,
        reconstruction: recon,
        statistic: stat,
        params_norm: params.norm(),
        gradient_norms: norms,
        batch: batch
            .inputs()
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
    }))
}

fn check_feature_rank(features: &DMatrix<f64>, t: usize) {
    let mut centered = features.clone();
    let m = centered.nrows() as f64;
    for mut col in centered.column_iter_mut() {
        let mu = col.sum() / m;
        col.add_scalar_mut(-mu);
    }
    let smallest = centered.singular_values().min();
    if smallest < RANK_WARN_BELOW {
        log::warn!("iteration {t}: smallest singular value of centered features is {smallest:.3e}");
    }
}

fn apply_euclidean(
    blocks: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    velocity: Option<&mut [Vec<f64>]>,
    momentum: f64,
    rate: f64,
) {
    match velocity {
        None => {
            for (p, g) in blocks.into_iter().zip(grads) {
                for (p, g) in p.iter_mut().zip(g) {
                    *p -= rate * g;
                }
            }
        }
        Some(vel) => {
            for ((p, g), v) in blocks.into_iter().zip(grads).zip(vel) {
                for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *v = momentum * *v + g;
                    *p -= rate * *v;
                }
            }
        }
    }
}

fn dense_slices(grads: &[crate::nn::DenseGrad]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
        .collect()
}

/// One iteration at (0-based) step `t`: forward, backward, then the
/// simultaneous updates of Ξ, φ and Θ.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &Batch,
    config: &TrainConfig,
    u: &UnitVector,
    t: usize,
) -> Result<StepRecord> {
    let m = batch.len();
    let pass = params.forward(batch)?;
    let (recon_mse, diff) = reconstruction(pass.reconstruction(), batch.inputs());
    let sample = gof::project(pass.latents(), u)?;
    let sg = gof::statistic_gradient(config.test, &sample)?;
    let pvalue = gof::pvalue(config.test, sg.statistic, m)?;
    let sign = config.test.loss_sign();
    let loss = config.reconstruction_weight * recon_mse + sign * config.lambda * sg.statistic;
    if !loss.is_finite() {
        return Err(diagnostics(t, recon_mse, sg.statistic, params, vec![("statistic".into(), sg.norm)], batch));
    }

    // dT/dY = g uᵀ
    let g = nalgebra::DVector::from_column_slice(&sg.gradient);
    let u_row = nalgebra::RowDVector::from_row_slice(u.as_slice());
    let dstat_dy = &g * &u_row;
    let upstream = Upstream {
        latents: Some(&dstat_dy * (sign * config.lambda)),
        reconstruction: Some(diff * (2.0 * config.reconstruction_weight / m as f64)),
    };
    let grads: Gradients = params.backward(&pass, &upstream)?;

    let (theta_grad, direction) = if config.theta_uses_reconstruction {
        (grads.theta.clone(), StepDirection::Descent)
    } else {
        let vtg = pass.features().transpose() * &g;
        let dir = if config.test.rejects_small() {
            StepDirection::Ascent
        } else {
            StepDirection::Descent
        };
        (vtg * &u_row, dir)
    };

    let norms = vec![
        ("encoder".to_string(), grads.encoder_norm()),
        ("theta".to_string(), theta_grad.norm()),
        ("decoder".to_string(), grads.decoder_norm()),
        ("statistic".to_string(), sg.norm),
    ];
    if norms.iter().any(|(_, n)| !n.is_finite()) {
        return Err(diagnostics(t, recon_mse, sg.statistic, params, norms, batch));
    }
    if t.is_multiple_of(RANK_CHECK_EVERY) {
        check_feature_rank(pass.features(), t);
    }

    let eta1 = config.schedule.rate(config.eta1, t);
    let eta2 = config.schedule.rate(config.eta2, t);

    let n_enc = 2 * params.encoder.layers.len();
    if config.momentum > 0.0 && state.velocity.is_none() {
        let (enc, dec) = params.euclidean_blocks_mut();
        state.velocity = Some(enc.iter().chain(dec.iter()).map(|b| vec![0.0; b.len()]).collect());
    }
    let (enc_blocks, dec_blocks) = params.euclidean_blocks_mut();
    let (vel_enc, vel_dec) = match state.velocity.as_mut() {
        Some(v) => {
            let (a, b) = v.split_at_mut(n_enc);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    if !config.freeze_features {
        apply_euclidean(enc_blocks, dense_slices(&grads.encoder), vel_enc, config.momentum, eta1);
    }
    apply_euclidean(dec_blocks, dense_slices(&grads.decoder), vel_dec, config.momentum, eta1);
    if eta2 > 0.0 {
        params.theta = rsgd_step(&params.theta, &theta_grad, eta2, direction)?;
    }

    Ok(StepRecord {
        iter: t + 1,
        recon_mse,
        stat: sg.statistic,
        pvalue,
        lambda: config.lambda,
        eta1,
        eta2,
        loss,
    })
}

/// Owns the parameters and every piece of state needed to resume exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    config_text: String,
    params: ModelParams,
    iteration: usize,
    directions: ChaCha8Rng,
    optimizer: OptimizerState,
    running: RunningStats,
    epoch_order: Option<(usize, Vec<usize>)>,
}

/// Canonical text of a training configuration, used for hashing.
pub fn resolved_config_text(config: &TrainConfig, arch: &Architecture) -> String {
    #[derive(Serialize)]
    struct Resolved<'a> {
        train: &'a TrainConfig,
        architecture: &'a Architecture,
    }
    toml::to_string(&Resolved {
        train: config,
        architecture: arch,
    })
    .expect("config serializes to TOML")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Trainer {
    pub fn new(config: TrainConfig, arch: &Architecture) -> Result<Self> {
        config.validate()?;
        let params = init_params(arch, config.seed)?;
        let config_text = resolved_config_text(&config, arch);
        Ok(Self::with_params(config, params, config_text))
    }

    /// Starts from given parameters (e.g. a pretrained encoder).
    pub fn with_params(config: TrainConfig, params: ModelParams, config_text: String) -> Self {
        Trainer {
            directions: seeded_stream(config.seed, DIRECTION_STREAM),
            config,
            config_text,
            params,
            iteration: 0,
            optimizer: OptimizerState::default(),
            running: RunningStats::default(),
            epoch_order: None,
        }
    }

    /// Replaces the text embedded in checkpoints (and hashed) with the
    /// caller's resolved configuration.
    pub fn set_config_text(&mut self, text: String) {
        self.config_text = text;
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if ckpt.seed != config.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                ckpt.seed, config.seed
            )));
        }
        Ok(Trainer {
            directions: ckpt.rng.to_rng(),
            config,
            config_text: ckpt.config_text,
            params: ckpt.params,
            iteration: ckpt.iteration,
            optimizer: OptimizerState {
                velocity: ckpt.velocity,
            },
            running: ckpt.running,
            epoch_order: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_text(&self) -> &str {
        &self.config_text
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config_text.as_bytes())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn running(&self) -> &RunningStats {
        &self.running
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_text: self.config_text.clone(),
            seed: self.config.seed,
            iteration: self.iteration,
            params: self.params.clone(),
            velocity: self.optimizer.velocity.clone(),
            running: self.running,
            rng: RngState::of(&self.directions),
        }
    }

    fn batch_rows(&mut self, n: usize) -> Vec<usize> {
        let m = self.config.batch_size;
        let per_epoch = n / m;
        let epoch = self.iteration / per_epoch;
        let pos = self.iteration % per_epoch;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seeded_stream(self.config.seed, EPOCH_STREAM_BASE + epoch as u64));
            self.epoch_order = Some((epoch, order));
        }
        let order = &self.epoch_order.as_ref().expect("just set").1;
        order[pos * m..(pos + 1) * m].to_vec()
    }

    /// Runs one iteration on the next mini-batch of `data`.
    pub fn step(&mut self, data: &DMatrix<f64>) -> Result<StepRecord> {
        let n = data.nrows();
        if n < self.config.batch_size {
            return Err(Error::InsufficientSamples {
                needed: self.config.batch_size,
                got: n,
            });
        }
        let rows = self.batch_rows(n);
        let batch = Batch::new(crate::data::select_rows(data, &rows))?;
        let u = gof::sample_unit_sphere(self.params.latent_dim(), &mut self.directions);
        let record = train_step(
            &mut self.params,
            &mut self.optimizer,
            &batch,
            &self.config,
            &u,
            self.iteration,
        )?;
        self.iteration += 1;
        self.running.update(&record);
        Ok(record)
    }

    /// Trains until `total` iterations have been done. `observe` sees the
    /// trainer after each step; returning an error aborts.
    pub fn run_until<F>(&mut self, data: &DMatrix<f64>, total: usize, mut observe: F) -> Result<Vec<StepRecord>>
    where
        F: FnMut(&Trainer, &StepRecord) -> Result<()>,
    {
        let mut log = Vec::with_capacity(total.saturating_sub(self.iteration));
        while self.iteration < total {
            let record = self.step(data)?;
            observe(self, &record)?;
            log.push(record);
        }
        Ok(log)
    }
}

/// Trains from a seeded initialization for `config.total_iters(N)` iterations.
pub fn train(data: &DMatrix<f64>, config: &TrainConfig, arch: &Architecture) -> Result<(ModelParams, Vec<StepRecord>)> {
    if data.nrows() < config.batch_size {
        return Err(Error::InsufficientSamples {
            needed: config.batch_size,
            got: data.nrows(),
        });
    }
    let mut trainer = Trainer::new(config.clone(), arch)?;
    let log = trainer.run_until(data, config.total_iters(data.nrows()), |_, _| Ok(()))?;
    Ok((trainer.into_params(), log))
}

/// Writes the metrics log, preceded by a `#` line with the config hash and seed.
pub fn write_metrics_csv<W: Write>(out: &mut W, records: &[StepRecord], config_hash: &str, seed: u64) -> Result<()> {
    writeln!(out, "# config_sha256={config_hash} seed={seed}")?;
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter, r.recon_mse, r.stat, r.pvalue, r.lambda, r.eta1, r.eta2
        )?;
    }
    Ok(())
}

//! Higher criticism: are the mini-batch GoF p-values of a trained encoder
//! uniform? Also the λ sweep and selection built on it.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::select_rows;
use crate::error::{Error, Result};
use crate::gof::{self, TestKind, TestResult};
use crate::metrics::{self, Spectrum};
use crate::nn::{Architecture, Autoencoder};
use crate::par::{self, Exec};
use crate::trainer::{self, TrainConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_REPETITIONS: usize = 30;

pub const SWEEP_HEADER: &str = "lambda,mean_ksunif,std_ksunif,mi_lb,cond,recon_mse";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HCReport {
    pub pvalues: Vec<f64>,
    pub ks_unif: TestResult,
    pub test: TestKind,
    pub m: usize,
    pub seed: u64,
}

impl HCReport {
    pub fn median_pvalue(&self) -> f64 {
        median(&self.pvalues)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Row indices of ⌊n/m⌋ disjoint batches of size `m` from one shuffle of `0..n`.
pub fn partition<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks_exact(m.max(1)).map(<[usize]>::to_vec).collect()
}

/// Shuffles the rows, cuts them into ⌊N/m⌋ disjoint batches, projects each
/// batch's latents on a fresh direction and tests the resulting p-values for
/// uniformity.
pub fn evaluate_hc<A: Autoencoder + ?Sized>(
    model: &A,
    inputs: &DMatrix<f64>,
    test: TestKind,
    m: usize,
    seed: u64,
) -> Result<HCReport> {
    if test == TestKind::KsUnif {
        return Err(Error::InvalidConfig("higher criticism needs a normality test".into()));
    }
    test.check_size(m)?;
    let n = inputs.nrows();
    if n < 2 * m {
        return Err(Error::InsufficientSamples { needed: 2 * m, got: n });
    }
    let latents = model.encode_latents(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pvalues = partition(n, m, &mut rng)
        .iter()
        .map(|rows| {
            let u = gof::sample_unit_sphere(latents.ncols(), &mut rng);
            let sample = gof::project(&select_rows(&latents, rows), &u)?;
            Ok(gof::evaluate(test, &sample)?.pvalue)
        })
        .collect::<Result<Vec<f64>>>()?;
    let ks_unif = gof::ks_uniformity(&pvalues)?;
    Ok(HCReport {
        pvalues,
        ks_unif,
        test,
        m,
        seed,
    })
}

/// Seed of repetition `rep` derived from a base seed.
pub fn repetition_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(rep as u64 + 1)
}

/// `reps` independent reshuffles of the same held-out set.
pub fn repeat_hc<A: Autoencoder + ?Sized>(
    model: &A,
    inputs: &DMatrix<f64>,
    test: TestKind,
    m: usize,
    reps: usize,
    base_seed: u64,
    exec: Exec,
) -> Result<Vec<HCReport>> {
    par::try_map_range(exec, reps, |rep| {
        evaluate_hc(model, inputs, test, m, repetition_seed(base_seed, rep))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_ks_unif: f64,
    pub std_ks_unif: f64,
    pub mi_lb: f64,
    pub cond: f64,
    pub recon_mse: f64,
    /// KS-uniformity p-value of each repetition.
    pub ks_unif: Vec<f64>,
    /// Median of all mini-batch GoF p-values over all repetitions.
    pub median_gof_pvalue: f64,
    pub singular_values: Vec<f64>,
}

impl SweepRow {
    pub fn from_reports(lambda: f64, reports: &[HCReport], mi_lb: f64, spectrum: &Spectrum, recon_mse: f64) -> Result<Self> {
        if reports.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: reports.len(),
            });
        }
        let ks: Vec<f64> = reports.iter().map(|r| r.ks_unif.pvalue).collect();
        let n = ks.len() as f64;
        let mean = ks.iter().sum::<f64>() / n;
        let var = ks.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
        let all: Vec<f64> = reports.iter().flat_map(|r| r.pvalues.iter().copied()).collect();
        Ok(SweepRow {
            lambda,
            mean_ks_unif: mean,
            std_ks_unif: var.sqrt(),
            mi_lb,
            cond: spectrum.condition,
            recon_mse,
            ks_unif: ks,
            median_gof_pvalue: median(&all),
            singular_values: spectrum.singular_values.clone(),
        })
    }
}

/// Smallest λ whose mean KS-uniformity p-value exceeds `threshold`. When none
/// does, the error carries the row with the largest mean.
pub fn select_lambda(rows: &[SweepRow], threshold: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("select_lambda needs at least one sweep row"));
    }
    let feasible = rows
        .iter()
        .filter(|r| r.mean_ks_unif > threshold)
        .map(|r| r.lambda)
        .min_by(f64::total_cmp);
    match feasible {
        Some(l) => Ok(l),
        None => {
            let best = rows
                .iter()
                .max_by(|a, b| a.mean_ks_unif.total_cmp(&b.mean_ks_unif))
                .expect("non-empty");
            Err(Error::NoFeasibleLambda(Box::new(best.clone())))
        }
    }
}

/// Whether mean KS-uniformity, after 3-point median smoothing, rises to a
/// single peak and then falls.
pub fn is_unimodal(rows: &[SweepRow]) -> bool {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let y: Vec<f64> = sorted.iter().map(|r| r.mean_ks_unif).collect();
    let smooth: Vec<f64> = (0..y.len())
        .map(|i| {
            if i == 0 || i + 1 == y.len() {
                y[i]
            } else {
                median(&y[i - 1..=i + 1])
            }
        })
        .collect();
    let mut falling = false;
    for w in smooth.windows(2) {
        if w[1] < w[0] {
            falling = true;
        } else if w[1] > w[0] && falling {
            return false;
        }
    }
    true
}

/// Everything besides λ that a sweep needs.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub architecture: Architecture,
    pub repetitions: usize,
    /// Batch size for higher criticism; defaults to the training batch size.
    pub hc_batch: Option<usize>,
    pub mi_samples: usize,
    pub seed: u64,
    pub exec: Exec,
}

/// Trains one model per λ and evaluates it on `test_inputs`. Rows come back in
/// the order of `lambdas`.
pub fn sweep(spec: &SweepSpec, lambdas: &[f64], train_inputs: &DMatrix<f64>, test_inputs: &DMatrix<f64>) -> Result<Vec<SweepRow>> {
    if spec.repetitions < 2 {
        return Err(Error::InvalidConfig(format!(
            "repetitions must be at least 2, got {}",
            spec.repetitions
        )));
    }
    let rows = par::try_map_range(spec.exec, lambdas.len(), |i| {
        let config = TrainConfig {
            lambda: lambdas[i],
            ..spec.base.clone()
        };
        let (params, _) = trainer::train(train_inputs, &config, &spec.architecture)?;
        evaluate_model(spec, &params, lambdas[i], test_inputs)
    })?;
    if !is_unimodal(&rows) {
        log::warn!("mean KS-uniformity p-value is not unimodal in lambda");
    }
    Ok(rows)
}

/// HC repetitions, MI bound, spectrum and MSE for one trained model.
pub fn evaluate_model<A: Autoencoder + ?Sized>(spec: &SweepSpec, model: &A, lambda: f64, test_inputs: &DMatrix<f64>) -> Result<SweepRow> {
    let m = spec.hc_batch.unwrap_or(spec.base.batch_size);
    let reports = repeat_hc(model, test_inputs, spec.base.test, m, spec.repetitions, spec.seed, spec.exec)?;
    let moments = metrics::latent_moments(model, test_inputs)?;
    let mi = metrics::mi_lower_bound(model, &moments, spec.mi_samples, spec.seed)?;
    let spectrum = metrics::cov_spectrum(&moments);
    let mse = metrics::mse(model, test_inputs)?;
    SweepRow::from_reports(lambda, &reports, mi, &spectrum, mse)
}

pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow], config_hash: &str, seed: u64) -> Result<()> {
    writeln!(out, "# config_sha256={config_hash} seed={seed}")?;
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.lambda, r.mean_ks_unif, r.std_ks_unif, r.mi_lb, r.cond, r.recon_mse
        )?;
    }
    Ok(())
}

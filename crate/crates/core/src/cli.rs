//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical
//! abort. Errors go to stderr prefixed with `ERROR <code>:`.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::gof::{self, Sample, TestKind};
use crate::hc::{self, SweepSpec};
use crate::metrics;
use crate::nn::{Activation, Architecture, ModelParams};
use crate::par::{self, Exec};
use crate::trainer::{self, sha256_hex, Checkpoint, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gofae", version, about = "Goodness-of-fit autoencoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenKind {
    Manifold,
    Mixture,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run normality tests on samples (one sample per input line) and print
    /// one JSON object per sample and test.
    GofTest {
        /// sw, sf, cvm, ks, ep, a comma-separated list, or "all".
        #[arg(long, visible_alias = "test", default_value = "all")]
        kind: String,
        /// File with comma- or space-separated samples; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as CSV.
    GenData {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifold: intrinsic dimension r.
        #[arg(long, default_value_t = 2)]
        intrinsic_dim: usize,
        /// Manifold: ambient dimension n. Mixture: dimension.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1e-3)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 4)]
        components: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Higher-criticism evaluation of a checkpoint; prints JSON.
    HcEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "SW")]
        test: TestKind,
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = hc::DEFAULT_REPETITIONS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluation data; defaults to the held-out split of the run's dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MSE, MI lower bound and covariance spectrum of a checkpoint; prints JSON.
    Metrics {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = metrics::DEFAULT_MI_SAMPLES)]
        mi_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one model per λ; prints CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated; overrides `sweep.lambdas` in the config.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Manifold,
    Mixture,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn yes() -> bool {
    true
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl ArchitectureSpec {
    pub fn resolve(&self, input_dim: usize) -> Result<Architecture> {
        if let Some(d) = self.input_dim {
            if d != input_dim {
                return Err(Error::InvalidConfig(format!(
                    "architecture.input_dim: {d} does not match the dataset width {input_dim}"
                )));
            }
        }
        let base = Architecture::desk_scale(input_dim);
        let arch = Architecture {
            input_dim,
            encoder_hidden: self.encoder_hidden.clone().unwrap_or(base.encoder_hidden),
            feature_dim: self.feature_dim.unwrap_or(base.feature_dim),
            latent_dim: self.latent_dim.unwrap_or(base.latent_dim),
            decoder_hidden: self.decoder_hidden.clone().unwrap_or(base.decoder_hidden),
            activation: self.activation.unwrap_or(base.activation),
        };
        arch.validate()?;
        Ok(arch)
    }

    fn from_architecture(a: &Architecture) -> Self {
        ArchitectureSpec {
            input_dim: Some(a.input_dim),
            encoder_hidden: Some(a.encoder_hidden.clone()),
            feature_dim: Some(a.feature_dim),
            latent_dim: Some(a.latent_dim),
            decoder_hidden: Some(a.decoder_hidden.clone()),
            activation: Some(a.activation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hc_batch: Option<usize>,
    #[serde(default = "default_mi_samples")]
    pub mi_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_reps() -> usize {
    hc::DEFAULT_REPETITIONS
}
fn default_mi_samples() -> usize {
    metrics::DEFAULT_MI_SAMPLES
}
fn default_threshold() -> f64 {
    hc::DEFAULT_THRESHOLD
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambdas: Vec::new(),
            repetitions: default_reps(),
            hc_batch: None,
            mi_samples: default_mi_samples(),
            seed: 0,
            threshold: default_threshold(),
        }
    }
}

/// The complete configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub architecture: ArchitectureSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Run configuration with the dataset loaded and every default filled in.
pub struct Resolved {
    pub config: RunConfig,
    pub architecture: Architecture,
    pub text: String,
    pub hash: String,
    pub train: Dataset,
    pub test: Dataset,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string() + &field_hint(&e)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let s = &self.sweep;
        if s.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig("sweep.lambdas: every lambda must be >= 0".into()));
        }
        if s.repetitions < 2 {
            return Err(Error::InvalidConfig(format!(
                "sweep.repetitions: must be at least 2, got {}",
                s.repetitions
            )));
        }
        let d = &self.dataset;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dataset.test_fraction: must be in (0, 1), got {}",
                d.test_fraction
            )));
        }
        Ok(())
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        let need = |v: Option<usize>, field: &str| {
            v.ok_or_else(|| Error::InvalidConfig(format!("dataset.{field}: required for kind {:?}", d.kind)))
        };
        let mut ds = match d.kind {
            DataKind::Manifold => data::gen_manifold_gaussian(
                need(d.intrinsic_dim, "intrinsic_dim")?,
                need(d.dim, "dim")?,
                need(d.count, "count")?,
                d.noise_sigma.unwrap_or(1e-3),
                d.seed,
            )?,
            DataKind::Mixture => data::gen_gaussian_mixture(
                need(d.components, "components")?,
                need(d.dim, "dim")?,
                need(d.count, "count")?,
                d.seed,
            )?,
            DataKind::Csv | DataKind::Idx => {
                let path = d
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("dataset.path: required for file datasets".into()))?;
                if d.kind == DataKind::Csv {
                    data::load_csv(path)?
                } else {
                    data::load_idx(path)?
                }
            }
        };
        if d.standardize {
            ds.standardize();
        }
        Ok(ds)
    }

    /// Validates, loads the data and fills in the architecture.
    pub fn resolve(mut self) -> Result<Resolved> {
        self.validate()?;
        if let Some(p) = &self.dataset.path {
            self.dataset.path = Some(fs::canonicalize(p)?);
        }
        let full = self.load_dataset()?;
        let architecture = self.architecture.resolve(full.dim())?;
        self.architecture = ArchitectureSpec::from_architecture(&architecture);
        let (train, test) = full.split(self.dataset.test_fraction, self.dataset.split_seed)?;
        let text = toml::to_string(&self).expect("config serializes");
        let hash = sha256_hex(text.as_bytes());
        Ok(Resolved {
            config: self,
            architecture,
            text,
            hash,
            train,
            test,
        })
    }
}

fn field_hint(e: &toml::de::Error) -> String {
    e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default()
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss(_) | Error::NonFiniteActivation { .. } | Error::RankDeficient { .. } => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &text)?;
    }
    io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn parse_tests(spec: &str) -> Result<Vec<TestKind>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(TestKind::NORMALITY.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<TestKind>())
        .collect()
}

fn gof_test(test: &str, input: Option<&Path>) -> Result<()> {
    let kinds = parse_tests(test)?;
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(io::BufReader::new(fs::File::open(p)?)),
        None => Box::new(io::BufReader::new(io::stdin())),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut row = 0usize;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidSample(format!("sample {row}: {s:?} is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let sample = Sample::new(values)?;
        for &kind in &kinds {
            let r = gof::evaluate(kind, &sample)?;
            let line = json!({"row": row, "kind": r.kind, "stat": r.statistic, "pvalue": r.pvalue, "m": r.m});
            writeln!(out, "{line}")?;
        }
        row += 1;
    }
    Ok(())
}

fn train_cmd(config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let resolved = RunConfig::load(config)?.resolve()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), &resolved.text)?;
    let tc = resolved.config.train.clone();
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.config_text != resolved.text {
                log::warn!("resuming from a checkpoint written with a different configuration");
            }
            Trainer::from_checkpoint(ckpt, tc.clone())?
        }
        None => Trainer::new(tc.clone(), &resolved.architecture)?,
    };
    trainer.set_config_text(resolved.text.clone());
    let data = resolved.train.inputs();
    let total = tc.total_iters(data.nrows());
    let every = tc.checkpoint_every;
    let log = trainer.run_until(data, total, |t, _| {
        if let Some(k) = every {
            if t.iteration() % k == 0 {
                t.checkpoint().save(&out.join(format!("checkpoint-{:08}.bin", t.iteration())))?;
            }
        }
        Ok(())
    })?;
    trainer.checkpoint().save(&out.join("checkpoint.bin"))?;
    let mut csv = Vec::new();
    trainer::write_metrics_csv(&mut csv, &log, &resolved.hash, tc.seed)?;
    fs::write(out.join("metrics.csv"), csv)?;
    let params = trainer.params();
    let test = resolved.test.inputs();
    let summary = json!({
        "config_sha256": resolved.hash,
        "seed": tc.seed,
        "iterations": trainer.iteration(),
        "train_provenance": resolved.train.provenance(),
        "test_mse": metrics::mse(params, test)?,
    });
    write_json(Some(&out.join("summary.json")), &summary)
}

/// Loads a checkpoint and the evaluation data: an explicit file, or the
/// held-out split of the dataset described by the embedded configuration.
fn checkpoint_and_data(checkpoint: &Path, dataset: Option<&Path>) -> Result<(Checkpoint, Dataset, String)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let hash = sha256_hex(ckpt.config_text.as_bytes());
    let data = match dataset {
        Some(p) => data::load(p)?,
        None => {
            let cfg = RunConfig::parse(&ckpt.config_text).map_err(|_| {
                Error::InvalidConfig("--dataset: required, the checkpoint does not describe its dataset".into())
            })?;
            cfg.resolve()?.test
        }
    };
    if data.dim() != ckpt.params.input_dim() {
        return Err(Error::dims(format!("{} input columns", ckpt.params.input_dim()), data.dim()));
    }
    Ok((ckpt, data, hash))
}

#[allow(clippy::too_many_arguments)]
fn hc_eval(
    checkpoint: &Path,
    test: TestKind,
    m: usize,
    reps: usize,
    seed: u64,
    dataset: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let (ckpt, data, hash) = checkpoint_and_data(checkpoint, dataset)?;
    let reports = hc::repeat_hc(&ckpt.params, data.inputs(), test, m, reps, seed, Exec::default())?;
    let mean = reports.iter().map(|r| r.ks_unif.pvalue).sum::<f64>() / reports.len().max(1) as f64;
    let value = json!({
        "config_sha256": hash,
        "seed": seed,
        "train_seed": ckpt.seed,
        "dataset": data.provenance(),
        "test": test,
        "m": m,
        "mean_ks_unif": mean,
        "reports": reports,
    });
    write_json(out, &value)
}

fn metrics_cmd(checkpoint: &Path, dataset: Option<&Path>, samples: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let (ckpt, data, hash) = checkpoint_and_data(checkpoint, dataset)?;
    let params: &ModelParams = &ckpt.params;
    let moments = metrics::latent_moments(params, data.inputs())?;
    let spectrum = metrics::cov_spectrum(&moments);
    let value = json!({
        "config_sha256": hash,
        "seed": seed,
        "train_seed": ckpt.seed,
        "dataset": data.provenance(),
        "mse": metrics::mse(params, data.inputs())?,
        "mi_lb": metrics::mi_lower_bound(params, &moments, samples, seed)?,
        "mi_note": "Gaussian MI lower-bound estimate (nats)",
        "condition_number": spectrum.condition,
        "degenerate": spectrum.degenerate,
        "singular_values": spectrum.singular_values,
    });
    write_json(out, &value)
}

fn sweep_cmd(config: &Path, lambdas: Option<Vec<f64>>, out: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(l) = lambdas {
        cfg.sweep.lambdas = l;
    }
    if cfg.sweep.lambdas.is_empty() {
        return Err(Error::InvalidConfig("sweep.lambdas: at least one lambda is required".into()));
    }
    let r = cfg.resolve()?;
    let s = &r.config.sweep;
    let spec = SweepSpec {
        base: r.config.train.clone(),
        architecture: r.architecture.clone(),
        repetitions: s.repetitions,
        hc_batch: s.hc_batch,
        mi_samples: s.mi_samples,
        seed: s.seed,
        exec: Exec::default(),
    };
    let rows = hc::sweep(&spec, &s.lambdas, r.train.inputs(), r.test.inputs())?;
    let mut csv = Vec::new();
    hc::write_sweep_csv(&mut csv, &rows, &r.hash, r.config.train.seed)?;
    io::stdout().write_all(&csv)?;
    let selected = match hc::select_lambda(&rows, s.threshold) {
        Ok(l) => json!({"selected_lambda": l}),
        Err(Error::NoFeasibleLambda(best)) => {
            log::warn!("no lambda reached the threshold; best was {}", best.lambda);
            json!({"selected_lambda": null, "best_lambda": best.lambda})
        }
        Err(e) => return Err(e),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), &r.text)?;
        fs::write(dir.join("sweep.csv"), &csv)?;
        let detail = json!({
            "config_sha256": r.hash,
            "seed": r.config.train.seed,
            "selection": selected,
            "rows": rows,
        });
        fs::write(
            dir.join("sweep.json"),
            serde_json::to_string_pretty(&detail).expect("json serializes") + "\n",
        )?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GofTest { kind, input } => gof_test(&kind, input.as_deref()),
        Command::GenData {
            kind,
            count,
            seed,
            intrinsic_dim,
            dim,
            noise_sigma,
            components,
            out,
        } => {
            let ds = match kind {
                GenKind::Manifold => data::gen_manifold_gaussian(intrinsic_dim, dim, count, noise_sigma, seed)?,
                GenKind::Mixture => data::gen_gaussian_mixture(components, dim, count, seed)?,
            };
            ds.write_csv(&out)
        }
        Command::Train { config, out, resume } => train_cmd(&config, &out, resume.as_deref()),
        Command::HcEval {
            checkpoint,
            test,
            m,
            reps,
            seed,
            dataset,
            out,
        } => hc_eval(&checkpoint, test, m, reps, seed, dataset.as_deref(), out.as_deref()),
        Command::Metrics {
            checkpoint,
            dataset,
            mi_samples,
            seed,
            out,
        } => metrics_cmd(&checkpoint, dataset.as_deref(), mi_samples, seed, out.as_deref()),
        Command::Sweep { config, lambdas, out } => sweep_cmd(&config, lambdas, out.as_deref()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    if let Ok(v) = std::env::var("GOFAE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => par::init_threads(n),
            _ => {
                eprintln!("ERROR {EXIT_USAGE}: GOFAE_THREADS must be a positive integer, got {v:?}");
                return EXIT_USAGE;
            }
        }
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprintln!("ERROR {EXIT_USAGE}: {}", e.render().to_string().trim_end());
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("ERROR {code}: {e}");
            code
        }
    }
}

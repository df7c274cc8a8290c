use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gof::TestKind;

/// Learning-rate schedule shared by η₁ and η₂.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    /// `η · t0 / (t0 + t)`: square-summable but not summable.
    InverseTime { t0: f64 },
}

impl Schedule {
    /// Rate at (0-based) iteration `t`.
    pub fn rate(&self, base: f64, t: usize) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::InverseTime { t0 } => base * t0 / (t0 + t as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    #[serde(default = "default_test")]
    pub test: TestKind,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_eta1")]
    pub eta1: f64,
    #[serde(default = "default_eta2")]
    pub eta2: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Overrides `epochs` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    /// Heavy-ball coefficient for the Euclidean updates; 0 is plain SGD.
    #[serde(default)]
    pub momentum: f64,
    /// Weight of the reconstruction term; 0 trains on the statistic alone.
    #[serde(default = "default_one")]
    pub reconstruction_weight: f64,
    /// Also feed the reconstruction gradient to Θ (ablation).
    #[serde(default)]
    pub theta_uses_reconstruction: bool,
    /// Keep the encoder feature layers Ξ fixed.
    #[serde(default)]
    pub freeze_features: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_test() -> TestKind {
    TestKind::Sw
}
fn default_batch_size() -> usize {
    64
}
fn default_eta1() -> f64 {
    1e-3
}
fn default_eta2() -> f64 {
    1e-2
}
fn default_epochs() -> usize {
    20
}
fn default_one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            test: default_test(),
            batch_size: default_batch_size(),
            eta1: default_eta1(),
            eta2: default_eta2(),
            epochs: default_epochs(),
            max_iters: None,
            seed: 0,
            schedule: Schedule::Constant,
            momentum: 0.0,
            reconstruction_weight: 1.0,
            theta_uses_reconstruction: false,
            freeze_features: false,
            checkpoint_every: None,
        }
    }
}

fn invalid(field: &str, message: String) -> Error {
    Error::InvalidConfig(format!("{field}: {message}"))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be a finite value >= 0, got {}", self.lambda)));
        }
        if self.test == TestKind::KsUnif {
            return Err(invalid("test", "KSUnif is not a normality test".into()));
        }
        self.test
            .check_size(self.batch_size)
            .map_err(|e| invalid("batch_size", e.to_string()))?;
        if !(self.eta1 > 0.0 && self.eta1.is_finite()) {
            return Err(invalid("eta1", format!("must be > 0, got {}", self.eta1)));
        }
        if !(self.eta2 >= 0.0 && self.eta2.is_finite()) {
            return Err(invalid("eta2", format!("must be >= 0, got {}", self.eta2)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", format!("must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.reconstruction_weight >= 0.0 && self.reconstruction_weight.is_finite()) {
            return Err(invalid(
                "reconstruction_weight",
                format!("must be >= 0, got {}", self.reconstruction_weight),
            ));
        }
        if let Schedule::InverseTime { t0 } = self.schedule {
            if !(t0 > 0.0 && t0.is_finite()) {
                return Err(invalid("schedule.t0", format!("must be > 0, got {t0}")));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(invalid("checkpoint_every", "must be positive".into()));
        }
        Ok(())
    }

    /// Total iterations J for a dataset of `n` rows.
    pub fn total_iters(&self, n: usize) -> usize {
        self.max_iters
            .unwrap_or_else(|| self.epochs * (n / self.batch_size.max(1)))
    }
}

use std::fmt;
use std::path::PathBuf;

use crate::gof::TestKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate sample: variance {variance:e} is below {threshold:e}")]
    DegenerateSample { variance: f64, threshold: f64 },

    #[error("{kind} p-value approximation supports sample sizes {min}..={max}, got {m}")]
    UnsupportedSize {
        kind: TestKind,
        m: usize,
        min: usize,
        max: usize,
    },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("matrix is rank deficient: smallest singular value {smallest:e} < {threshold:e}")]
    RankDeficient { smallest: f64, threshold: f64 },

    #[error("point is not on the Stiefel manifold: |X^T X - I|_F = {deviation:e}")]
    NotOnManifold { deviation: f64 },

    #[error("non-finite activation in {network} layer {layer}")]
    NonFiniteActivation { network: &'static str, layer: usize },

    #[error("forward cache was produced by different parameters")]
    StaleCache,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(Box<Diagnostics>),

    #[error("need more than {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("joint covariance is singular even after ridge regularization")]
    SingularJointCovariance,

    #[error("bad dimensions: {0}")]
    BadDims(String),

    #[error("malformed file {path:?} at byte {offset}: {message}")]
    MalformedFile {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("no lambda reaches mean KS-uniformity p-value above the threshold; best was lambda = {}", .0.lambda)]
    NoFeasibleLambda(Box<crate::hc::SweepRow>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl fmt::Display, actual: impl fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

/// State dumped when training hits a non-finite loss or gradient.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub iteration: usize,
    pub reconstruction: f64,
    pub statistic: f64,
    pub params_norm: f64,
    pub gradient_norms: Vec<(String, f64)>,
    pub batch: Vec<Vec<f64>>,
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iteration {} (recon {}, statistic {}, |params| {:.6e}); gradient norms:",
            self.iteration, self.reconstruction, self.statistic, self.params_norm
        )?;
        for (name, norm) in &self.gradient_norms {
            write!(f, " {name}={norm:.6e}")?;
        }
        write!(f, "; last batch has {} rows", self.batch.len())?;
        if let Some(first) = self.batch.first() {
            write!(f, ", first row {first:?}")?;
        }
        Ok(())
    }
}

//! Fully-connected encoder/decoder with reverse-mode gradients.
//!
//! Rows are examples. The encoder is `V = H_Ξ(X)` (affine layers, each
//! followed by the hidden activation) and `Y = V Θ` with Θ on the Stiefel
//! manifold: no bias and no activation on the latent layer. The decoder maps
//! latents back through activated hidden layers and a linear output layer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stiefel::StiefelPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Piecewise linear; the smoothness the convergence arguments rely on is lost.
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, m: &mut DMatrix<f64>) {
        match self {
            Activation::Tanh => m.apply(|v| *v = v.tanh()),
            Activation::Relu => m.apply(|v| *v = v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine layer `x W + b`, `W` is fan_in × fan_out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: DMatrix::zeros(fan_in, fan_out),
            bias: DVector::zeros(fan_out),
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            weights: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit)),
            bias: DVector::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    /// Whether the last layer is followed by the activation as well.
    pub activate_output: bool,
}

impl Mlp {
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        activate_output: bool,
        rng: &mut R,
    ) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Mlp {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn identity() -> Self {
        Mlp {
            layers: Vec::new(),
            activation: Activation::Identity,
            activate_output: false,
        }
    }

    fn layer_activation(&self, index: usize) -> Activation {
        if index + 1 < self.layers.len() || self.activate_output {
            self.activation
        } else {
            Activation::Identity
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(Dense::fan_in)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Dense::fan_out)
    }

    /// Outputs of every layer, with the input first.
    fn forward_all(&self, x: &DMatrix<f64>, network: &'static str) -> Result<Vec<DMatrix<f64>>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = acts.last().expect("input pushed first");
            if input.ncols() != layer.fan_in() {
                return Err(Error::dims(
                    format!("{network} layer {i} input width {}", layer.fan_in()),
                    input.ncols(),
                ));
            }
            let mut z = layer.forward(input);
            self.layer_activation(i).apply(&mut z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { network, layer: i });
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_all(x, "mlp")?.pop().expect("non-empty"))
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the final output) and returns
    /// layer gradients and the gradient w.r.t. the input.
    fn backward(&self, acts: &[DMatrix<f64>], grad_out: DMatrix<f64>) -> (Vec<DenseGrad>, DMatrix<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts[i + 1];
            let act = self.layer_activation(i);
            if act != Activation::Identity {
                delta.zip_apply(out, |d, y| *d *= act.derivative_from_output(y));
            }
            let input = &acts[i];
            let weights = input.transpose() * &delta;
            let bias = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            delta = &delta * layer.weights.transpose();
            grads.push(DenseGrad { weights, bias });
        }
        grads.reverse();
        (grads, delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub decoder_hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_feature_dim() -> usize {
    32
}
fn default_latent_dim() -> usize {
    8
}
fn default_activation() -> Activation {
    Activation::Tanh
}

impl Architecture {
    /// Two hidden layers of width 64, k = 32, d = 8, tanh.
    pub fn desk_scale(input_dim: usize) -> Self {
        Architecture {
            input_dim,
            encoder_hidden: default_hidden(),
            feature_dim: default_feature_dim(),
            latent_dim: default_latent_dim(),
            decoder_hidden: default_hidden(),
            activation: default_activation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.feature_dim, self.latent_dim];
        if dims.contains(&0) || self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::InvalidConfig("all layer widths must be positive".into()));
        }
        if self.feature_dim < self.latent_dim {
            return Err(Error::InvalidConfig(format!(
                "feature_dim ({}) must be at least latent_dim ({})",
                self.feature_dim, self.latent_dim
            )));
        }
        Ok(())
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.encoder_hidden);
        s.push(self.feature_dim);
        s
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.latent_dim];
        s.extend(&self.decoder_hidden);
        s.push(self.input_dim);
        s
    }
}

/// Encoder features Ξ, Stiefel layer Θ and decoder φ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub theta: StiefelPoint,
    pub decoder: Mlp,
}

#[derive(Debug, Clone)]
pub struct Batch {
    inputs: DMatrix<f64>,
    labels: Option<Vec<u32>>,
}

impl Batch {
    pub fn new(inputs: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() < 3 {
            return Err(Error::InvalidSample(format!("a batch needs at least 3 rows, got {}", inputs.nrows())));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("batch contains non-finite inputs".into()));
        }
        Ok(Batch { inputs, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub features: DMatrix<f64>,
    pub latents: DMatrix<f64>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    encoder_acts: Vec<DMatrix<f64>>,
    decoder_acts: Vec<DMatrix<f64>>,
    fingerprint: u64,
}

impl ForwardPass {
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.encoder_acts[0]
    }

    pub fn features(&self) -> &DMatrix<f64> {
        self.encoder_acts.last().expect("input is always cached")
    }

    pub fn latents(&self) -> &DMatrix<f64> {
        &self.decoder_acts[0]
    }

    pub fn reconstruction(&self) -> &DMatrix<f64> {
        self.decoder_acts.last().expect("latents are always cached")
    }
}

/// Gradients of the scalar loss with respect to the model outputs.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    /// `dL/dY` from terms that depend on the latents directly.
    pub latents: Option<DMatrix<f64>>,
    /// `dL/dX̂` from the reconstruction term.
    pub reconstruction: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<DenseGrad>,
    /// Euclidean (ambient) gradient for Θ.
    pub theta: DMatrix<f64>,
    pub decoder: Vec<DenseGrad>,
    /// Total `dL/dY`, including the part flowing back from the decoder.
    pub latents: DMatrix<f64>,
}

impl Gradients {
    /// Flat views in the same order as [`ModelParams::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.encoder {
            out.push(g.weights.as_slice());
            out.push(g.bias.as_slice());
        }
        out.push(self.theta.as_slice());
        for g in &self.decoder {
            out.push(g.weights.as_slice());
            out.push(g.bias.as_slice());
        }
        out
    }

    pub fn encoder_norm(&self) -> f64 {
        dense_norm(&self.encoder)
    }

    pub fn decoder_norm(&self) -> f64 {
        dense_norm(&self.decoder)
    }
}

fn dense_norm(grads: &[DenseGrad]) -> f64 {
    grads
        .iter()
        .map(|g| g.weights.norm_squared() + g.bias.norm_squared())
        .sum::<f64>()
        .sqrt()
}

impl ModelParams {
    /// Glorot-initialized Ξ and φ; Θ is the retraction of a Gaussian matrix.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = Mlp::glorot(&arch.encoder_sizes(), arch.activation, true, rng);
        let theta = StiefelPoint::random(arch.feature_dim, arch.latent_dim, rng)?;
        let decoder = Mlp::glorot(&arch.decoder_sizes(), arch.activation, false, rng);
        Ok(ModelParams { encoder, theta, decoder })
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.theta.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim().unwrap_or(self.feature_dim())
    }

    pub fn architecture(&self) -> Architecture {
        let hidden = |mlp: &Mlp| -> Vec<usize> {
            let n = mlp.layers.len();
            mlp.layers.iter().take(n.saturating_sub(1)).map(Dense::fan_out).collect()
        };
        Architecture {
            input_dim: self.input_dim(),
            encoder_hidden: hidden(&self.encoder),
            feature_dim: self.feature_dim(),
            latent_dim: self.latent_dim(),
            decoder_hidden: hidden(&self.decoder),
            activation: self.encoder.activation,
        }
    }

    /// Flat parameter views: encoder (W, b) per layer, Θ, decoder (W, b) per layer.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.theta.matrix().as_slice());
        for l in &self.decoder.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    /// Mutable views of the Euclidean blocks (Ξ then φ); Θ is excluded because
    /// it may only change through a retraction.
    pub fn euclidean_blocks_mut(&mut self) -> (Vec<&mut [f64]>, Vec<&mut [f64]>) {
        let enc = self
            .encoder
            .layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect();
        let dec = self
            .decoder
            .layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect();
        (enc, dec)
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a hash over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for block in self.blocks() {
            for v in block {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn latents_from_features(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::dims(format!("{} features", self.feature_dim()), features.ncols()));
        }
        Ok(features * self.theta.matrix())
    }

    pub fn encode(&self, batch: &Batch) -> Result<Encoded> {
        let features = self.encoder.forward_all(batch.inputs(), "encoder")?.pop().expect("non-empty");
        let latents = self.latents_from_features(&features)?;
        Ok(Encoded { features, latents })
    }

    pub fn decode(&self, latents: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if latents.ncols() != self.latent_dim() {
            return Err(Error::dims(format!("{} latent columns", self.latent_dim()), latents.ncols()));
        }
        Ok(self.decoder.forward_all(latents, "decoder")?.pop().expect("non-empty"))
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardPass> {
        let encoder_acts = self.encoder.forward_all(batch.inputs(), "encoder")?;
        let latents = self.latents_from_features(encoder_acts.last().expect("non-empty"))?;
        if latents.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                network: "latent",
                layer: 0,
            });
        }
        let decoder_acts = self.decoder.forward_all(&latents, "decoder")?;
        Ok(ForwardPass {
            encoder_acts,
            decoder_acts,
            fingerprint: self.fingerprint(),
        })
    }

    pub fn backward(&self, pass: &ForwardPass, upstream: &Upstream) -> Result<Gradients> {
        if pass.fingerprint != self.fingerprint() {
            return Err(Error::StaleCache);
        }
        let (m, d) = pass.latents().shape();
        let recon_shape = pass.reconstruction().shape();

        let (decoder, from_decoder) = match &upstream.reconstruction {
            Some(g) => {
                if g.shape() != recon_shape {
                    return Err(Error::dims(format!("{recon_shape:?}"), format!("{:?}", g.shape())));
                }
                self.decoder.backward(&pass.decoder_acts, g.clone())
            }
            None => (
                self.decoder
                    .layers
                    .iter()
                    .map(|l| DenseGrad {
                        weights: DMatrix::zeros(l.fan_in(), l.fan_out()),
                        bias: DVector::zeros(l.fan_out()),
                    })
                    .collect(),
                DMatrix::zeros(m, d),
            ),
        };

        let mut latents = from_decoder;
        if let Some(g) = &upstream.latents {
            if g.shape() != (m, d) {
                return Err(Error::dims(format!("{:?}", (m, d)), format!("{:?}", g.shape())));
            }
            latents += g;
        }

        let theta = pass.features().transpose() * &latents;
        let dfeatures = &latents * self.theta.matrix().transpose();
        let (encoder, _) = self.encoder.backward(&pass.encoder_acts, dfeatures);
        Ok(Gradients {
            encoder,
            theta,
            decoder,
            latents,
        })
    }
}

/// What evaluation code needs from a trained model. Implemented by
/// [`ModelParams`]; tests substitute stubs.
pub trait Autoencoder: Sync {
    fn latent_dim(&self) -> usize;
    fn encode_latents(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    fn decode_latents(&self, latents: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl Autoencoder for ModelParams {
    fn latent_dim(&self) -> usize {
        ModelParams::latent_dim(self)
    }

    fn encode_latents(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let features = self.encoder.forward_all(inputs, "encoder")?.pop().expect("non-empty");
        self.latents_from_features(&features)
    }

    fn decode_latents(&self, latents: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.decode(latents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ModelParams, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = Architecture {
            input_dim: 6,
            encoder_hidden: vec![7],
            feature_dim: 5,
            latent_dim: 3,
            decoder_hidden: vec![4],
            activation: Activation::Tanh,
        };
        let params = ModelParams::init(&arch, &mut rng).unwrap();
        let x = DMatrix::from_fn(16, 6, |_, _| rng.random_range(-1.5..1.5));
        (params, Batch::new(x).unwrap())
    }

    #[test]
    fn architecture_round_trips() {
        let (params, _) = tiny();
        let arch = params.architecture();
        assert_eq!(arch.encoder_hidden, vec![7]);
        assert_eq!(arch.decoder_hidden, vec![4]);
        assert_eq!((arch.input_dim, arch.feature_dim, arch.latent_dim), (6, 5, 3));
    }

    #[test]
    fn stale_cache_is_detected() {
        let (mut params, batch) = tiny();
        let pass = params.forward(&batch).unwrap();
        params.decoder.layers[0].bias[0] += 1e-9;
        let up = Upstream {
            reconstruction: Some(DMatrix::zeros(16, 6)),
            ..Default::default()
        };
        assert!(matches!(params.backward(&pass, &up), Err(Error::StaleCache)));
    }

    #[test]
    fn no_reconstruction_gradient_means_zero_decoder_gradient() {
        let (params, batch) = tiny();
        let pass = params.forward(&batch).unwrap();
        let up = Upstream {
            latents: Some(DMatrix::from_element(16, 3, 0.3)),
            reconstruction: None,
        };
        let g = params.backward(&pass, &up).unwrap();
        assert_eq!(g.decoder_norm(), 0.0);
        assert!(g.encoder_norm() > 0.0);
    }

    #[test]
    fn permuting_theta_columns_permutes_latents() {
        let (mut params, batch) = tiny();
        let y = params.encode(&batch).unwrap().latents;
        let perm = [2usize, 0, 1];
        let theta = params.theta.matrix().clone();
        let permuted = DMatrix::from_fn(theta.nrows(), 3, |i, j| theta[(i, perm[j])]);
        params.theta = StiefelPoint::new(permuted).unwrap();
        let y2 = params.encode(&batch).unwrap().latents;
        for i in 0..y.nrows() {
            for j in 0..3 {
                assert_eq!(y2[(i, j)], y[(i, perm[j])]);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (params, _) = tiny();
        let wrong = Batch::new(DMatrix::zeros(5, 4)).unwrap();
        assert!(matches!(params.encode(&wrong), Err(Error::DimensionMismatch { .. })));
        assert!(params.decode(&DMatrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn non_finite_activation_is_reported() {
        let (mut params, batch) = tiny();
        params.encoder.layers[0].weights[(0, 0)] = f64::NAN;
        assert!(matches!(
            params.encode(&batch),
            Err(Error::NonFiniteActivation { network: "encoder", layer: 0 })
        ));
    }
}

//! Binary checkpoints. The byte layout is documented in
//! `docs/checkpoint-format.md`; every integer and float is little-endian.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::RunningStats;
use crate::error::{Error, Result};
use crate::nn::{Activation, Architecture, Dense, Mlp, ModelParams};
use crate::stiefel::StiefelPoint;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GOFAE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn to_rng(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub seed: u64,
    pub iteration: usize,
    pub params: ModelParams,
    pub velocity: Option<Vec<Vec<f64>>>,
    pub running: RunningStats,
    pub rng: RngState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) {
    put_u32(out, rows);
    put_u32(out, cols);
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&at(i, j).to_le_bytes());
        }
    }
}

fn put_dense(out: &mut Vec<u8>, layer: &Dense) {
    let w = &layer.weights;
    put_matrix(out, w.nrows(), w.ncols(), |i, j| w[(i, j)]);
    put_matrix(out, 1, layer.bias.len(), |_, j| layer.bias[j]);
}

impl Checkpoint {
    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.config_text.as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        put_u32(&mut out, self.config_text.len());
        out.extend_from_slice(self.config_text.as_bytes());

        let arch = self.params.architecture();
        put_u32(&mut out, arch.input_dim);
        put_u32(&mut out, arch.feature_dim);
        put_u32(&mut out, arch.latent_dim);
        out.push(arch.activation.code());
        for hidden in [&arch.encoder_hidden, &arch.decoder_hidden] {
            put_u32(&mut out, hidden.len());
            for &h in hidden.iter() {
                put_u32(&mut out, h);
            }
        }

        let p = &self.params;
        put_u32(&mut out, 2 * (p.encoder.layers.len() + p.decoder.layers.len()) + 1);
        for layer in &p.encoder.layers {
            put_dense(&mut out, layer);
        }
        let theta = p.theta.matrix();
        put_matrix(&mut out, theta.nrows(), theta.ncols(), |i, j| theta[(i, j)]);
        for layer in &p.decoder.layers {
            put_dense(&mut out, layer);
        }

        match &self.velocity {
            None => out.push(0),
            Some(buffers) => {
                out.push(1);
                put_u32(&mut out, buffers.len());
                for b in buffers {
                    put_matrix(&mut out, 1, b.len(), |_, j| b[j]);
                }
            }
        }

        out.extend_from_slice(&self.running.count.to_le_bytes());
        for v in [self.running.loss, self.running.recon, self.running.stat] {
            out.extend_from_slice(&v.to_le_bytes());
        }

        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(5)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let seed = r.u64()?;
        let iteration = r.u64()? as usize;
        let len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;

        let input_dim = r.u32()? as usize;
        let feature_dim = r.u32()? as usize;
        let latent_dim = r.u32()? as usize;
        let code = r.take(1)?[0];
        let activation =
            Activation::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown activation code {code}")))?;
        let mut hidden = || -> Result<Vec<usize>> {
            let n = r.u32()? as usize;
            (0..n).map(|_| r.u32().map(|v| v as usize)).collect()
        };
        let encoder_hidden = hidden()?;
        let decoder_hidden = hidden()?;
        let arch = Architecture {
            input_dim,
            encoder_hidden,
            feature_dim,
            latent_dim,
            decoder_hidden,
            activation,
        };
        arch.validate()?;

        let enc_sizes = arch.encoder_sizes();
        let dec_sizes = arch.decoder_sizes();
        let count = r.u32()? as usize;
        let expected = 2 * (enc_sizes.len() - 1 + dec_sizes.len() - 1) + 1;
        if count != expected {
            return Err(Error::Checkpoint(format!("expected {expected} parameter blocks, found {count}")));
        }
        let encoder = read_mlp(&mut r, &enc_sizes, activation, true)?;
        let theta = StiefelPoint::new(r.matrix(feature_dim, latent_dim)?)?;
        let decoder = read_mlp(&mut r, &dec_sizes, activation, false)?;
        let params = ModelParams { encoder, theta, decoder };

        let velocity = match r.take(1)?[0] {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                let blocks: Vec<usize> = params
                    .blocks()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 2 * params.encoder.layers.len())
                    .map(|(_, b)| b.len())
                    .collect();
                if n != blocks.len() {
                    return Err(Error::Checkpoint(format!("expected {} momentum blocks, found {n}", blocks.len())));
                }
                Some(
                    blocks
                        .iter()
                        .map(|&len| r.matrix(1, len).map(|m| m.iter().copied().collect()))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            other => return Err(Error::Checkpoint(format!("bad momentum flag {other}"))),
        };

        let running = RunningStats {
            count: r.u64()?,
            loss: r.f64()?,
            recon: r.f64()?,
            stat: r.f64()?,
        };
        let rng = RngState {
            seed: r.take(32)?.try_into().expect("32 bytes"),
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let ckpt = Checkpoint {
            config_text,
            seed,
            iteration,
            params,
            velocity,
            running,
            rng,
        };
        if ckpt.config_hash() != hash {
            return Err(Error::Checkpoint("config hash does not match embedded config".into()));
        }
        if !ckpt.params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_mlp(r: &mut Reader<'_>, sizes: &[usize], activation: Activation, activate_output: bool) -> Result<Mlp> {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let weights = r.matrix(w[0], w[1])?;
            let bias = r.matrix(1, w[1])?;
            Ok(Dense {
                weights,
                bias: DVector::from_iterator(w[1], bias.iter().copied()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp {
        layers,
        activation,
        activate_output,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "block at byte {} is {r}x{c}, expected {rows}x{cols}",
                self.pos - 8
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

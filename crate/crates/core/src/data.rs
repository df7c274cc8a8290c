//! Synthetic generators and file loaders.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Width of the hidden layer of the manifold generator.
pub const MANIFOLD_HIDDEN: usize = 16;

/// Radius of the sphere carrying mixture means.
pub const MIXTURE_RADIUS: f64 = 5.0;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Generator { name: String, seed: u64, params: String },
    File { path: PathBuf, sha256: String },
    Derived { parent: Box<Provenance>, operation: String },
}

impl Provenance {
    fn derived(&self, operation: impl Into<String>) -> Self {
        Provenance::Derived {
            parent: Box::new(self.clone()),
            operation: operation.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::EmptyInput("dataset has no rows or no columns"));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("dataset contains non-finite entries".into()));
        }
        Ok(Dataset { inputs, provenance })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        select_rows(&self.inputs, rows)
    }

    /// Shuffles once and splits off the last `test_fraction` of the rows.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        let n = self.len();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        if n_test == 0 || n_test == n {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, test) = order.split_at(n - n_test);
        let part = |rows: &[usize], name: &str| Dataset {
            inputs: select_rows(&self.inputs, rows),
            provenance: self.provenance.derived(format!("split seed={seed} fraction={test_fraction} part={name}")),
        };
        Ok((part(train, "train"), part(test, "test")))
    }

    /// Per-coordinate zero mean and unit variance (n−1 denominator). Constant
    /// columns are only centered.
    pub fn standardize(&mut self) -> Standardization {
        let n = self.len() as f64;
        let mut mean = DVector::zeros(self.dim());
        let mut scale = DVector::from_element(self.dim(), 1.0);
        for (j, mut col) in self.inputs.column_iter_mut().enumerate() {
            let mu = col.sum() / n;
            col.add_scalar_mut(-mu);
            let var = if n > 1.0 { col.norm_squared() / (n - 1.0) } else { 0.0 };
            mean[j] = mu;
            if var > 0.0 {
                let sd = var.sqrt();
                col /= sd;
                scale[j] = sd;
            }
        }
        self.provenance = self.provenance.derived("standardize");
        Standardization { mean, scale }
    }

    /// Writes the rows as CSV with the provenance in a leading comment.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let prov = serde_json::to_string(&self.provenance).expect("provenance serializes");
        writeln!(out, "# provenance={prov}").expect("write to string");
        for row in self.inputs.row_iter() {
            let mut first = true;
            for v in row.iter() {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v}").expect("write to string");
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// `x = act(z A + b) C`, the noiseless part of the manifold generator.
#[derive(Debug, Clone)]
pub struct ManifoldGenerator {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub tanh: bool,
}

impl ManifoldGenerator {
    /// Gaussian `A` (r×h) and `b`, and `C` (h×n) scaled by `1/sqrt(h)`.
    pub fn random<R: Rng + ?Sized>(r: usize, n: usize, rng: &mut R) -> Self {
        let h = MANIFOLD_HIDDEN;
        let a = DMatrix::from_fn(r, h, |_, _| rng.sample(StandardNormal));
        let b = DVector::from_fn(h, |_, _| rng.sample(StandardNormal));
        let c_scale = 1.0 / (h as f64).sqrt();
        let c = DMatrix::from_fn(h, n, |_, _| c_scale * rng.sample::<f64, _>(StandardNormal));
        ManifoldGenerator { a, b, c, tanh: true }
    }

    /// Identity maps with a linear activation: `x = z` (needs r = n).
    pub fn identity(n: usize) -> Self {
        ManifoldGenerator {
            a: DMatrix::identity(n, n),
            b: DVector::zeros(n),
            c: DMatrix::identity(n, n),
            tanh: false,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, noise_sigma: f64, rng: &mut R) -> Result<DMatrix<f64>> {
        if self.a.ncols() != self.b.len() || self.b.len() != self.c.nrows() {
            return Err(Error::BadDims(format!(
                "A is {:?}, b has {}, C is {:?}",
                self.a.shape(),
                self.b.len(),
                self.c.shape()
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        let r = self.intrinsic_dim();
        let z = DMatrix::from_fn(count, r, |_, _| rng.sample(StandardNormal));
        let mut hidden = z * &self.a;
        for (j, mut col) in hidden.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        if self.tanh {
            hidden.apply(|v| *v = v.tanh());
        }
        let mut x = hidden * &self.c;
        if noise_sigma > 0.0 {
            let noise = Normal::new(0.0, noise_sigma).expect("finite sigma");
            x.apply(|v| *v += noise.sample(rng));
        }
        Ok(x)
    }
}

/// Data on an r-dimensional curved manifold in R^n plus isotropic noise.
pub fn gen_manifold_gaussian(r: usize, n: usize, count: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if r == 0 || r >= n {
        return Err(Error::BadDims(format!("need 1 <= r < n, got r = {r}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generator = ManifoldGenerator::random(r, n, &mut rng);
    let x = generator.sample(count, noise_sigma, &mut rng)?;
    Dataset::new(
        x,
        Provenance::Generator {
            name: "manifold_gaussian".into(),
            seed,
            params: format!("r={r} n={n} count={count} noise_sigma={noise_sigma} hidden={MANIFOLD_HIDDEN}"),
        },
    )
}

/// Equal-weight mixture of unit-covariance Gaussians with means drawn
/// uniformly on the sphere of radius 5.
pub fn gen_gaussian_mixture(components: usize, dim: usize, count: usize, seed: u64) -> Result<Dataset> {
    if components == 0 || dim == 0 {
        return Err(Error::BadDims(format!(
            "need components >= 1 and dim >= 1, got {components} and {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..components)
        .map(|_| {
            if components == 1 {
                return vec![0.0; dim];
            }
            let u = crate::gof::sample_unit_sphere(dim, &mut rng);
            u.as_slice().iter().map(|v| v * MIXTURE_RADIUS).collect()
        })
        .collect();
    let mut x = DMatrix::zeros(count, dim);
    for i in 0..count {
        let mean = &means[rng.random_range(0..components)];
        for j in 0..dim {
            x[(i, j)] = mean[j] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Dataset::new(
        x,
        Provenance::Generator {
            name: "gaussian_mixture".into(),
            seed,
            params: format!("components={components} dim={dim} count={count} radius={MIXTURE_RADIUS}"),
        },
    )
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn malformed(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

/// Reads an IDX file of unsigned bytes (e.g. MNIST images, magic
/// `0x00000803`). The first dimension indexes examples and the remaining ones
/// are flattened row-major; values are scaled to [0, 1].
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(malformed(path, bytes.len() as u64, "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(malformed(path, 0, "magic number must start with two zero bytes"));
    }
    if bytes[2] != 0x08 {
        return Err(malformed(path, 2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(malformed(path, 3, "zero dimensions"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(malformed(path, bytes.len() as u64, "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count = dims[0];
    let width: usize = dims[1..].iter().product();
    let expected = count
        .checked_mul(width)
        .ok_or_else(|| malformed(path, 4, "dimension product overflows"))?;
    let body = &bytes[header..];
    if body.len() != expected {
        let offset = (header + body.len().min(expected)) as u64;
        return Err(malformed(
            path,
            offset,
            format!("expected {expected} data bytes, found {}", body.len()),
        ));
    }
    if count == 0 || width == 0 {
        return Err(malformed(path, 4, "empty dimension"));
    }
    let x = DMatrix::from_row_iterator(count, width, body.iter().map(|&b| b as f64 / 255.0));
    Dataset::new(
        x,
        Provenance::File {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        },
    )
}

/// Reads comma-separated rows of numbers. Lines starting with `#` are
/// skipped. The first row is taken as a header when any of its fields is not
/// a number.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let offset = reader.position().byte();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let at = e.position().map_or(offset, |p| p.byte());
                return Err(malformed(path, at, e.to_string()));
            }
        }
        let offset = record.position().map_or(offset, |p| p.byte());
        let parsed: Vec<Option<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        if first {
            first = false;
            if parsed.iter().any(Option::is_none) {
                continue;
            }
        }
        let w = *width.get_or_insert(parsed.len());
        if parsed.len() != w {
            return Err(malformed(
                path,
                offset,
                format!("row {} has {} fields, expected {w}", rows + 1, parsed.len()),
            ));
        }
        for (j, v) in parsed.into_iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(malformed(
                        path,
                        offset,
                        format!("row {} field {} is not a finite number: {:?}", rows + 1, j + 1, &record[j]),
                    ))
                }
            }
        }
        rows += 1;
    }
    let Some(width) = width.filter(|_| rows > 0) else {
        return Err(malformed(path, bytes.len() as u64, "no data rows"));
    };
    Dataset::new(
        DMatrix::from_row_slice(rows, width, &values),
        Provenance::File {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        },
    )
}

/// Dispatches on the extension: `.csv` or IDX (`.idx`, `*-ubyte`).
pub fn load(path: &Path) -> Result<Dataset> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    if name.ends_with(".csv") {
        load_csv(path)
    } else {
        load_idx(path)
    }
}

//! Stiefel manifold `{Θ ∈ R^{k×d} : ΘᵀΘ = I_d}` with the embedded Euclidean
//! metric.
//!
//! - tangent space at Θ: `{Γ : ΓᵀΘ + ΘᵀΓ = 0}`
//! - tangent projection: `P_Θ(D) = D - Θ (ΘᵀD + DᵀΘ) / 2`
//! - retraction: the orthonormal polar factor `R Sᵀ` of `Θ + ηΓ = R Λ Sᵀ`,
//!   which is also the nearest orthonormal matrix in Frobenius norm

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on `|ΘᵀΘ - I|_F` for a valid point.
pub const MANIFOLD_TOLERANCE: f64 = 1e-8;

/// Smallest singular value accepted by the retraction.
pub const RANK_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    /// Wraps a matrix after checking it has orthonormal columns.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() < matrix.ncols() {
            return Err(Error::dims(
                format!("k >= d, d = {}", matrix.ncols()),
                format!("k = {}", matrix.nrows()),
            ));
        }
        let deviation = orthonormality_error(&matrix);
        if !(deviation <= MANIFOLD_TOLERANCE) {
            return Err(Error::NotOnManifold { deviation });
        }
        Ok(StiefelPoint(matrix))
    }

    /// Retraction of an i.i.d. standard normal k×d matrix.
    pub fn random<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        let raw = DMatrix::from_fn(k, d, |_, _| rng.sample(StandardNormal));
        retract_svd(&raw)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

/// `|XᵀX - I|_F`.
pub fn orthonormality_error(x: &DMatrix<f64>) -> f64 {
    let gram = x.transpose() * x;
    (gram - DMatrix::<f64>::identity(x.ncols(), x.ncols())).norm()
}

#[derive(Debug, Clone)]
pub struct TangentVector {
    matrix: DMatrix<f64>,
    basepoint: StiefelPoint,
}

impl TangentVector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn basepoint(&self) -> &StiefelPoint {
        &self.basepoint
    }

    /// `|ΓᵀΘ + ΘᵀΓ|_F`, zero for an exact tangent vector.
    pub fn tangency_error(&self) -> f64 {
        let theta = self.basepoint.matrix();
        let s = self.matrix.transpose() * theta;
        (&s + s.transpose()).norm()
    }

    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }
}

fn check_shape(basepoint: &StiefelPoint, m: &DMatrix<f64>) -> Result<()> {
    if m.shape() != basepoint.matrix().shape() {
        return Err(Error::dims(
            format!("{:?}", basepoint.matrix().shape()),
            format!("{:?}", m.shape()),
        ));
    }
    Ok(())
}

pub fn project_tangent(basepoint: &StiefelPoint, euclidean_grad: &DMatrix<f64>) -> Result<TangentVector> {
    check_shape(basepoint, euclidean_grad)?;
    let theta = basepoint.matrix();
    let sym = theta.transpose() * euclidean_grad;
    let sym = (&sym + sym.transpose()) * 0.5;
    Ok(TangentVector {
        matrix: euclidean_grad - theta * sym,
        basepoint: basepoint.clone(),
    })
}

/// Nearest matrix with orthonormal columns, `R Sᵀ` from `raw = R Λ Sᵀ`.
///
/// Singular vector pairs are sign-normalized so that the largest-magnitude
/// entry of each left singular vector is positive.
pub fn retract_svd(raw: &DMatrix<f64>) -> Result<StiefelPoint> {
    let (k, d) = raw.shape();
    if k < d || d == 0 {
        return Err(Error::dims("k >= d >= 1", format!("{k}x{d}")));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient {
            smallest: f64::NAN,
            threshold: RANK_THRESHOLD,
        });
    }
    let svd = raw.clone().svd(true, true);
    let smallest = svd.singular_values.min();
    if !(smallest >= RANK_THRESHOLD) {
        return Err(Error::RankDeficient {
            smallest,
            threshold: RANK_THRESHOLD,
        });
    }
    let mut u = svd.u.expect("left singular vectors requested");
    let mut v_t = svd.v_t.expect("right singular vectors requested");
    for j in 0..d {
        let col = u.column(j);
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            u.column_mut(j).neg_mut();
            v_t.row_mut(j).neg_mut();
        }
    }
    Ok(StiefelPoint(u * v_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Ascent,
    Descent,
}

impl StepDirection {
    pub fn sign(self) -> f64 {
        match self {
            StepDirection::Ascent => 1.0,
            StepDirection::Descent => -1.0,
        }
    }
}

/// One Riemannian SGD step: project, move by `±stepsize · Γ`, retract.
pub fn rsgd_step(
    basepoint: &StiefelPoint,
    euclidean_grad: &DMatrix<f64>,
    stepsize: f64,
    direction: StepDirection,
) -> Result<StiefelPoint> {
    if !(stepsize > 0.0 && stepsize.is_finite()) {
        return Err(Error::InvalidConfig(format!("step size must be positive, got {stepsize}")));
    }
    let gamma = project_tangent(basepoint, euclidean_grad)?;
    let moved = basepoint.matrix() + gamma.matrix() * (direction.sign() * stepsize);
    retract_svd(&moved)
}

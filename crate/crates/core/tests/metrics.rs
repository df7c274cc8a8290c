mod common;

use common::{gaussian_matrix, rng, LinearStub, RawModel};
use gofae::metrics::{self, cov_spectrum, gaussian_mi, latent_moments, mi_lower_bound, mse, LatentMoments};
use gofae::nn::Architecture;
use gofae::trainer::init_params;
use nalgebra::{DMatrix, DVector};

fn identity(d: usize) -> LinearStub {
    LinearStub {
        enc: DMatrix::identity(d, d),
        dec: DMatrix::identity(d, d),
    }
}

fn moments_of(cov: DMatrix<f64>) -> LatentMoments {
    LatentMoments {
        mean: DVector::zeros(cov.nrows()),
        count: 100,
        covariance: cov,
    }
}

#[test]
fn mse_examples() {
    let x = gaussian_matrix(50, 4, &mut rng(1));
    assert_eq!(mse(&identity(4), &x).unwrap(), 0.0);
    let zero = LinearStub {
        enc: DMatrix::identity(4, 2),
        dec: DMatrix::zeros(2, 4),
    };
    let expected = x.row_iter().map(|r| r.norm_squared()).sum::<f64>() / 50.0;
    assert!((mse(&zero, &x).unwrap() - expected).abs() <= 1e-12);

    let params = init_params(&Architecture::desk_scale(8), 2).unwrap();
    let x = gaussian_matrix(100, 8, &mut rng(3));
    let (_, _, xhat) = RawModel::from(&params).forward(&x);
    let mut oracle = 0.0;
    for i in 0..100 {
        for j in 0..8 {
            oracle += (xhat[(i, j)] - x[(i, j)]).powi(2);
        }
    }
    assert!((mse(&params, &x).unwrap() - oracle / 100.0).abs() <= 1e-10);
}

#[test]
fn latent_moment_examples() {
    let constant = LinearStub {
        enc: DMatrix::zeros(3, 2),
        dec: DMatrix::zeros(2, 3),
    };
    let m = latent_moments(&constant, &gaussian_matrix(20, 3, &mut rng(4))).unwrap();
    assert_eq!(m.covariance, DMatrix::zeros(2, 2));
    assert!(cov_spectrum(&m).degenerate);

    let z = gaussian_matrix(100_000, 4, &mut rng(5));
    let m = latent_moments(&identity(4), &z).unwrap();
    assert!((&m.covariance - DMatrix::identity(4, 4)).norm() <= 0.05);
    assert!((&m.covariance - m.covariance.transpose()).amax() <= 1e-10);

    let two = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
    let m = latent_moments(&identity(1), &two).unwrap();
    assert_eq!(m.mean[0], 2.0);
    assert_eq!(m.covariance[(0, 0)], 2.0);

    assert!(matches!(
        latent_moments(&identity(4), &gaussian_matrix(4, 4, &mut rng(6))),
        Err(gofae::Error::InsufficientSamples { .. })
    ));
}

#[test]
fn mi_of_identity_chain_is_large() {
    let moments = moments_of(DMatrix::identity(8, 8));
    let mi = mi_lower_bound(&identity(8), &moments, metrics::DEFAULT_MI_SAMPLES, 7).unwrap();
    assert!(mi.is_finite() && mi >= 10.0, "{mi}");
}

#[test]
fn mi_of_constant_decoder_is_small() {
    let stub = LinearStub {
        enc: DMatrix::identity(8, 8),
        dec: DMatrix::zeros(8, 8),
    };
    let moments = moments_of(DMatrix::identity(8, 8));
    let mi = mi_lower_bound(&stub, &moments, 10_000, 8).unwrap();
    assert!(mi <= 0.05, "{mi}");
}

#[test]
fn mi_matches_the_analytic_gaussian_value() {
    // z ~ N(0, I), z̃ = z B + s ε: MI = ½ log det(I + Bᵀ B / s²)
    let mut r = rng(9);
    let (d, s) = (3, 0.7);
    let b = gaussian_matrix(d, d, &mut r) * 0.8;
    let z = gaussian_matrix(200_000, d, &mut r);
    let zt = &z * &b + gaussian_matrix(200_000, d, &mut r) * s;
    let est = gaussian_mi(&z, &zt).unwrap();
    let analytic = 0.5 * (DMatrix::identity(d, d) + b.transpose() * &b / (s * s)).determinant().ln();
    assert!((est - analytic).abs() <= 0.05 * analytic, "{est} vs {analytic}");
}

#[test]
fn spectrum_examples() {
    let s = cov_spectrum(&moments_of(DMatrix::identity(3, 3)));
    assert_eq!(s.singular_values, vec![1.0; 3]);
    assert_eq!(s.condition, 1.0);
    assert!(!s.degenerate);

    let s = cov_spectrum(&moments_of(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))));
    assert_eq!(s.singular_values, vec![4.0, 1.0]);
    assert_eq!(s.condition, 4.0);

    let a = gaussian_matrix(6, 6, &mut rng(10));
    let psd = &a * a.transpose();
    let s = cov_spectrum(&moments_of(psd.clone()));
    let mut eig: Vec<f64> = psd.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    for (a, b) in s.singular_values.iter().zip(&eig) {
        assert!((a - b).abs() <= 1e-10 * eig[0]);
    }
}

#[test]
fn spearman_examples() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(metrics::spearman(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap(), 1.0);
    assert_eq!(metrics::spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    assert!(metrics::spearman(&x, &[1.0]).is_err());
}

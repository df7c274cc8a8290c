mod common;

use std::fs;

use common::rng;
use gofae::data::{self, gen_gaussian_mixture, gen_manifold_gaussian, load_csv, load_idx, ManifoldGenerator, Provenance};
use gofae::gof::{self, TestKind};
use gofae::metrics::LatentMoments;
use gofae::Error;
use nalgebra::DMatrix;

fn malformed_offset(e: Error) -> u64 {
    match e {
        Error::MalformedFile { offset, .. } => offset,
        other => panic!("expected MalformedFile, got {other:?}"),
    }
}

/// The manifold is curved, so the global covariance spans more than r
/// directions; intrinsic rank shows up in small neighbourhoods.
#[test]
fn manifold_data_has_the_intrinsic_rank() {
    let d = gen_manifold_gaussian(2, 8, 10_000, 1e-3, 1).unwrap();
    let x = d.inputs();
    let floor = 1e-3 * 1e-3;
    let k = 20;
    for anchor in (0..x.nrows()).step_by(500) {
        let mut dist: Vec<(f64, usize)> = (0..x.nrows())
            .map(|i| ((x.row(i) - x.row(anchor)).norm_squared(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        let rows: Vec<usize> = dist[..k].iter().map(|p| p.1).collect();
        let cov = LatentMoments::from_rows(&d.select_rows(&rows)).unwrap().covariance;
        let sv = cov.singular_values();
        let above = sv.iter().filter(|&&s| s > 100.0 * floor).count();
        assert_eq!(above, 2, "anchor {anchor}: {sv:?}");
    }
}

#[test]
fn identity_generator_gives_full_rank_gaussian_data() {
    let x = ManifoldGenerator::identity(4).sample(5000, 0.0, &mut rng(2)).unwrap();
    let cov = LatentMoments::from_rows(&x).unwrap().covariance;
    assert!((cov - DMatrix::identity(4, 4)).norm() < 0.1);
    for j in 0..4 {
        let p = gof::evaluate(TestKind::Sw, &gof::Sample::new(x.column(j).rows(0, 500).iter().copied().collect()).unwrap())
            .unwrap()
            .pvalue;
        assert!(p > 1e-3, "column {j}: p {p}");
    }
}

#[test]
fn generators_are_deterministic() {
    let a = gen_manifold_gaussian(3, 6, 100, 0.1, 7).unwrap();
    let b = gen_manifold_gaussian(3, 6, 100, 0.1, 7).unwrap();
    assert_eq!(a.inputs(), b.inputs());
    assert_ne!(a.inputs(), gen_manifold_gaussian(3, 6, 100, 0.1, 8).unwrap().inputs());
    let a = gen_gaussian_mixture(4, 2, 100, 7).unwrap();
    assert_eq!(a.inputs(), gen_gaussian_mixture(4, 2, 100, 7).unwrap().inputs());
    assert!(matches!(a.provenance(), Provenance::Generator { seed: 7, .. }));
}

#[test]
fn bad_dimensions_are_rejected() {
    assert!(matches!(gen_manifold_gaussian(8, 8, 10, 0.0, 0), Err(Error::BadDims(_))));
    assert!(matches!(gen_manifold_gaussian(0, 8, 10, 0.0, 0), Err(Error::BadDims(_))));
    assert!(matches!(gen_gaussian_mixture(0, 2, 10, 0), Err(Error::BadDims(_))));
}

#[test]
fn mixture_projections_are_rejected_often() {
    let d = gen_gaussian_mixture(4, 2, 6400, 3).unwrap();
    let mut r = rng(4);
    let mut rejected = 0;
    let batches = 100;
    for b in 0..batches {
        let rows = d.select_rows(&(b * 64..(b + 1) * 64).collect::<Vec<_>>());
        let u = gof::sample_unit_sphere(2, &mut r);
        let s = gof::project(&rows, &u).unwrap();
        if gof::evaluate(TestKind::Sw, &s).unwrap().pvalue < 0.05 {
            rejected += 1;
        }
    }
    assert!(rejected >= 50, "{rejected}/{batches}");

    let single = gen_gaussian_mixture(1, 2, 6400, 5).unwrap();
    let rejected = (0..batches)
        .filter(|b| {
            let rows = single.select_rows(&(b * 64..(b + 1) * 64).collect::<Vec<_>>());
            let s = gof::project(&rows, &gof::sample_unit_sphere(2, &mut r)).unwrap();
            gof::evaluate(TestKind::Sw, &s).unwrap().pvalue < 0.05
        })
        .count();
    assert!(rejected <= 15, "{rejected}/{batches}");
}

#[test]
fn idx_fixture_loads_to_known_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny-ubyte");
    let mut bytes = vec![0, 0, 0x08, 3];
    for d in [2u32, 2, 2] {
        bytes.extend(d.to_be_bytes());
    }
    bytes.extend([0, 51, 102, 255, 255, 0, 153, 204]);
    fs::write(&path, &bytes).unwrap();
    let d = load_idx(&path).unwrap();
    let expected = DMatrix::from_row_slice(2, 4, &[0.0, 0.2, 0.4, 1.0, 1.0, 0.0, 0.6, 0.8]);
    assert!((d.inputs() - expected).amax() < 1e-15);
    assert!(matches!(d.provenance(), Provenance::File { sha256, .. } if sha256.len() == 64));

    bytes.pop();
    fs::write(&path, &bytes).unwrap();
    assert_eq!(malformed_offset(load_idx(&path).unwrap_err()), 16 + 7);
    bytes[2] = 0x0d;
    fs::write(&path, &bytes).unwrap();
    assert_eq!(malformed_offset(load_idx(&path).unwrap_err()), 2);
}

#[test]
fn csv_loading() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");

    fs::write(&path, "a,b\n1,2\n3,4\n").unwrap();
    let d = load_csv(&path).unwrap();
    assert_eq!(d.inputs(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));

    fs::write(&path, "# comment\n1,2\n3,4\n").unwrap();
    assert_eq!(load_csv(&path).unwrap().len(), 2);

    fs::write(&path, "").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::MalformedFile { .. })));

    fs::write(&path, "1,2\n3,x\n").unwrap();
    assert_eq!(malformed_offset(load_csv(&path).unwrap_err()), 4);

    fs::write(&path, "1,2\n3,4,5\n").unwrap();
    assert_eq!(malformed_offset(load_csv(&path).unwrap_err()), 4);
}

#[test]
fn csv_round_trip_keeps_values_and_records_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let d = gen_manifold_gaussian(2, 5, 50, 0.01, 9).unwrap();
    d.write_csv(&path).unwrap();
    let first = fs::read_to_string(&path).unwrap();
    assert!(first.starts_with("# provenance={\"source\":\"generator\""));
    let back = data::load(&path).unwrap();
    assert_eq!(back.inputs(), d.inputs());
}

#[test]
fn split_and_standardize() {
    let mut d = gen_gaussian_mixture(2, 3, 1000, 10).unwrap();
    d.standardize();
    let m = LatentMoments::from_rows(d.inputs()).unwrap();
    assert!(m.mean.amax() < 1e-12);
    for j in 0..3 {
        assert!((m.covariance[(j, j)] - 1.0).abs() < 1e-12);
    }
    let (train, test) = d.split(0.2, 11).unwrap();
    assert_eq!(train.len() + test.len(), 1000);
    assert_eq!(test.len(), 200);
    assert!(matches!(test.provenance(), Provenance::Derived { .. }));
}

mod common;

use common::{LinearStub, NoiseStub};
use gofae::gof::TestKind;
use gofae::hc::{self, evaluate_hc, is_unimodal, repeat_hc, select_lambda, SweepRow};
use gofae::par::Exec;
use gofae::Error;
use nalgebra::DMatrix;

fn row(lambda: f64, mean_ks_unif: f64) -> SweepRow {
    SweepRow {
        lambda,
        mean_ks_unif,
        std_ks_unif: 0.0,
        mi_lb: 0.0,
        cond: 1.0,
        recon_mse: 0.0,
        ks_unif: vec![mean_ks_unif; 2],
        median_gof_pvalue: 0.5,
        singular_values: vec![1.0],
    }
}

#[test]
fn gaussian_encoder_passes_higher_criticism() {
    let inputs = DMatrix::zeros(6400, 1);
    for kind in [TestKind::Sw, TestKind::Ks] {
        let passed = (0..100)
            .filter(|&seed| {
                let stub = NoiseStub { dim: 4, seed, uniform: false };
                let r = evaluate_hc(&stub, &inputs, kind, 64, 1000 + seed).unwrap();
                assert_eq!(r.pvalues.len(), 100);
                r.ks_unif.pvalue >= 0.05
            })
            .count();
        assert!(passed >= 90, "{kind}: {passed}/100");
    }
}

#[test]
fn uniform_encoder_fails_higher_criticism() {
    let inputs = DMatrix::zeros(6400, 1);
    let stub = NoiseStub { dim: 1, seed: 1, uniform: true };
    let r = evaluate_hc(&stub, &inputs, TestKind::Sw, 64, 2).unwrap();
    let mean = r.pvalues.iter().sum::<f64>() / r.pvalues.len() as f64;
    assert!(mean < 0.05, "mean p {mean}");
    assert!(r.ks_unif.pvalue < 1e-3, "{}", r.ks_unif.pvalue);
}

#[test]
fn two_batches_at_the_boundary() {
    let stub = NoiseStub { dim: 3, seed: 3, uniform: false };
    let r = evaluate_hc(&stub, &DMatrix::zeros(128, 1), TestKind::Sw, 64, 4).unwrap();
    assert_eq!(r.pvalues.len(), 2);
    assert!((0.0..=1.0).contains(&r.ks_unif.pvalue));
    assert!(matches!(
        evaluate_hc(&stub, &DMatrix::zeros(127, 1), TestKind::Sw, 64, 4),
        Err(Error::InsufficientSamples { .. })
    ));
}

#[test]
fn batches_partition_the_dataset() {
    let (n, m) = (1000, 64);
    let batches = hc::partition(n, m, &mut common::rng(5));
    assert_eq!(batches.len(), n / m);
    let mut seen = vec![false; n];
    for b in &batches {
        assert_eq!(b.len(), m);
        for &i in b {
            assert!(!seen[i], "row {i} appears twice");
            seen[i] = true;
        }
    }
    assert_eq!(seen.iter().filter(|s| **s).count(), (n / m) * m);
}

#[test]
fn report_follows_the_partition() {
    // Row i encodes to i, so a batch's p-value can be recomputed from its rows.
    let n = 300;
    let inputs = DMatrix::from_fn(n, 1, |i, _| (i as f64).sqrt());
    let stub = LinearStub {
        enc: DMatrix::from_element(1, 1, 1.0),
        dec: DMatrix::from_element(1, 1, 1.0),
    };
    let r = evaluate_hc(&stub, &inputs, TestKind::Sw, 50, 6).unwrap();
    let mut rng = common::rng(6);
    let batches = hc::partition(n, 50, &mut rng);
    for (b, p) in batches.iter().zip(&r.pvalues) {
        let u = gofae::gof::sample_unit_sphere(1, &mut rng);
        let values: Vec<f64> = b.iter().map(|&i| u.as_slice()[0] * inputs[(i, 0)]).collect();
        let expected = gofae::gof::evaluate(TestKind::Sw, &gofae::gof::Sample::new(values).unwrap()).unwrap();
        assert_eq!(expected.pvalue, *p);
    }
}

#[test]
fn identical_seeds_give_identical_reports() {
    let stub = NoiseStub { dim: 4, seed: 6, uniform: false };
    let inputs = DMatrix::zeros(1000, 1);
    let a = evaluate_hc(&stub, &inputs, TestKind::Sf, 50, 7).unwrap();
    let b = evaluate_hc(&stub, &inputs, TestKind::Sf, 50, 7).unwrap();
    assert_eq!(a, b);
    let c = evaluate_hc(&stub, &inputs, TestKind::Sf, 50, 8).unwrap();
    assert_ne!(a.pvalues, c.pvalues);
}

#[test]
fn repetitions_agree_across_executors() {
    let stub = NoiseStub { dim: 4, seed: 9, uniform: false };
    let inputs = DMatrix::zeros(2000, 1);
    let seq = repeat_hc(&stub, &inputs, TestKind::Sw, 64, 6, 10, Exec::Sequential).unwrap();
    let par = repeat_hc(&stub, &inputs, TestKind::Sw, 64, 6, 10, Exec::Parallel).unwrap();
    assert_eq!(seq, par);
    let seeds: std::collections::HashSet<u64> = seq.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 6);
}

#[test]
fn select_lambda_examples() {
    let rows: Vec<SweepRow> = [(1.0, 0.0), (10.0, 0.01), (63.0, 0.12), (100.0, 0.40), (1e5, 0.02)]
        .iter()
        .map(|&(l, p)| row(l, p))
        .collect();
    assert_eq!(select_lambda(&rows, hc::DEFAULT_THRESHOLD).unwrap(), 63.0);
    assert!(is_unimodal(&rows));

    let low = vec![row(1.0, 0.01), row(2.0, 0.03), row(3.0, 0.02)];
    match select_lambda(&low, 0.05) {
        Err(Error::NoFeasibleLambda(best)) => assert_eq!(best.lambda, 2.0),
        other => panic!("{other:?}"),
    }
    assert_eq!(select_lambda(&[row(7.0, 0.5)], 0.05).unwrap(), 7.0);
    assert!(matches!(select_lambda(&[], 0.05), Err(Error::EmptyInput(_))));
}

#[test]
fn bimodal_sweep_is_flagged() {
    let rows: Vec<SweepRow> = [0.01, 0.3, 0.35, 0.02, 0.01, 0.4, 0.5, 0.01]
        .iter()
        .enumerate()
        .map(|(i, &p)| row(i as f64, p))
        .collect();
    assert!(!is_unimodal(&rows));
}

#[test]
fn sweep_row_needs_two_repetitions() {
    let stub = NoiseStub { dim: 2, seed: 11, uniform: false };
    let inputs = DMatrix::zeros(256, 1);
    let reports = repeat_hc(&stub, &inputs, TestKind::Sw, 64, 3, 12, Exec::Sequential).unwrap();
    let spectrum = gofae::metrics::spectrum_of(&DMatrix::identity(2, 2));
    assert!(SweepRow::from_reports(1.0, &reports[..1], 0.0, &spectrum, 0.0).is_err());
    let r = SweepRow::from_reports(1.0, &reports, 0.0, &spectrum, 0.0).unwrap();
    let ks: Vec<f64> = reports.iter().map(|r| r.ks_unif.pvalue).collect();
    assert_eq!(r.ks_unif, ks);
    assert!((r.mean_ks_unif - ks.iter().sum::<f64>() / 3.0).abs() < 1e-15);
}

mod common;

use common::*;
use facedeblur::eval::metrics::{cap_psnr, mse};
use facedeblur::eval::*;
use facedeblur::experiments::synthetic_dataset;
use facedeblur::image::Image;
use facedeblur::rng;
use facedeblur::Error;
use rand::Rng;

#[test]
fn psnr_reference_values() {
    let a = Image::filled(3, 16, 16, 0.25);
    let b = Image::filled(3, 16, 16, 0.35);
    assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert_eq!(cap_psnr(f64::INFINITY), PSNR_CAP);
    let half = Image::filled(3, 16, 16, 0.5);
    let zero = Image::filled(3, 16, 16, 0.0);
    assert!((psnr(&half, &zero).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert!(matches!(psnr(&a, &Image::filled(3, 16, 8, 0.0)), Err(Error::Size(_))));
}

#[test]
fn ssim_matches_windowed_transcription() {
    for case in 0..5 {
        let a = random_image(10 + case, 3, 20, 17);
        let noisy = {
            let mut r = rng::rng(case);
            let mut b = a.clone();
            b.data_mut().iter_mut().for_each(|v| *v = (*v + 0.2 * (r.random::<f64>() - 0.5)).clamp(0.0, 1.0));
            b
        };
        let want = oracle_ssim(&a, &noisy);
        assert!((ssim(&a, &noisy).unwrap() - want).abs() <= 1e-7, "case {case}");
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
        let far = random_image(99 + case, 3, 20, 17);
        assert!((ssim(&a, &far).unwrap() - oracle_ssim(&a, &far)).abs() <= 1e-7);
    }
    let s = ssim(&Image::filled(3, 12, 12, 0.2), &Image::filled(3, 12, 12, 0.2)).unwrap();
    assert!((s - 1.0).abs() <= 1e-12);
}

fn random_embedding(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| (r.random_range(0..4) as f64) * 0.5).collect()
}

#[test]
fn topk_matches_exhaustive_ranking() {
    let mut r = rng::rng(4);
    for trial in 0..30 {
        let ids = 6;
        let gallery: Vec<(Vec<f64>, String)> =
            (0..12).map(|i| (random_embedding(&mut r, 3), format!("id{}", i % ids))).collect();
        let probes: Vec<(Vec<f64>, String)> =
            (0..10).map(|_| (random_embedding(&mut r, 3), format!("id{}", r.random_range(0..ids)))).collect();
        let wrap = |v: &[(Vec<f64>, String)]| {
            v.iter().map(|(e, id)| Identified { embedding: e.clone(), identity: id.clone() }).collect::<Vec<_>>()
        };
        for k in [1, 2, 3, 5, 12, 20] {
            let got = topk_recognition(&wrap(&probes), &wrap(&gallery), k).unwrap();
            assert_eq!(got, oracle_topk(&probes, &gallery, k), "trial {trial} k {k}");
        }
    }
}

#[test]
fn topk_protocol_errors() {
    let g = vec![Identified { embedding: vec![0.0], identity: "a".into() }];
    let p = vec![Identified { embedding: vec![0.0], identity: "b".into() }];
    assert!(matches!(topk_recognition(&p, &g, 1), Err(Error::Protocol(_))));
    assert!(matches!(topk_recognition(&[], &g, 1), Err(Error::Protocol(_))));
    assert!(matches!(topk_recognition(&g, &g, 0), Err(Error::Param(_))));
    assert_eq!(topk_recognition(&g, &g, 1).unwrap(), 1.0);
}

#[test]
fn embedder_contract() {
    let e = DownsampleEmbedder::default();
    let a = random_image(1, 3, 32, 32);
    let b = random_image(2, 3, 32, 32);
    let d = identity_distance(&e, &a, &b).unwrap();
    assert!(d > 0.0 && d <= 2.0);
    assert_eq!(identity_distance(&e, &a, &a).unwrap(), 0.0);
    assert!(matches!(identity_distance(&e, &a, &Image::filled(3, 32, 32, 0.4)), Err(Error::Input(_))));
    let all = embed_all(&e, &[(&a, "x"), (&b, "y")]).unwrap();
    assert_eq!(all[1].identity, "y");
    assert_eq!(all[0].embedding.len(), 256);
}

#[test]
fn identity_restore_reports_blurred_psnr_per_size() {
    let ds = synthetic_dataset(3, 32, 2, 13, 5).unwrap();
    let entries: Vec<usize> = (0..ds.len()).collect();
    let report = evaluate_with(&ds, &entries, |b, _| Ok(b.clone()));
    assert_eq!(report.count, ds.len());
    assert!(report.failures.is_empty());
    for m in &report.per_image {
        let b = ds.blurred(m.entry_id).unwrap();
        assert_eq!(m.psnr, psnr(&b, ds.clear(m.entry_id)).unwrap());
    }
    assert_eq!(report.per_size.len(), 1);
    assert_eq!(report.per_size[0].kernel_size, 13);
    let mean = report.per_image.iter().map(|m| m.psnr).sum::<f64>() / report.count as f64;
    assert!((report.mean_psnr - mean).abs() < 1e-12);

    let perfect = evaluate_with(&ds, &entries, |_, e| Ok(ds.clear(e).clone()));
    assert_eq!(perfect.mean_psnr, PSNR_CAP);
    assert!((perfect.mean_ssim - 1.0).abs() < 1e-12);
}

#[test]
fn failures_are_recorded_and_csv_round_trips() {
    let ds = synthetic_dataset(2, 32, 2, 13, 6).unwrap();
    let entries: Vec<usize> = (0..ds.len()).collect();
    let report = evaluate_with(&ds, &entries, |b, e| {
        if e == 1 {
            Err(Error::Input("stub failure".into()))
        } else {
            Ok(b.clone())
        }
    });
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].0, 1);
    assert_eq!(report.count, ds.len() - 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    report.write_csv(&path).unwrap();
    let back = MetricsReport::read_csv(&path).unwrap();
    assert_eq!(back, report.per_image);
    let json: serde_json::Value = serde_json::from_str(&report.aggregates_json().unwrap()).unwrap();
    assert_eq!(json["count"], report.count);
}

#[test]
fn fscore_table_average_row() {
    let mut scores = [0.0; 11];
    for (k, s) in scores.iter_mut().enumerate() {
        *s = k as f64 / 10.0;
    }
    assert!((average_fscore(&scores) - 0.55).abs() < 1e-12);
    let t = FscoreTable { columns: vec!["clear".into()], scores: vec![scores] };
    let rows = t.rows();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows.last().unwrap(), &vec!["average".to_string(), "0.5500".to_string()]);
}

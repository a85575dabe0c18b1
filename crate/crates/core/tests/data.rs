mod common;

use std::fs;
use std::path::Path;

use facedeblur::blur::{generate_kernel_bank, DegradationConfig, KernelBank, Split};
use facedeblur::data::*;
use facedeblur::image::{Image, LabelMap};
use facedeblur::synthetic::{synth_faces, write_faces};
use facedeblur::Error;

fn build(root: &Path, out: &str, materialize: bool) -> DatasetManifest {
    let faces = synth_faces(3, 2, 48, 1);
    write_faces(&root.join("faces"), &faces).unwrap();
    let bank_path = root.join("kernels.bin");
    generate_kernel_bank(4, &[13, 15], 9).unwrap().save(&bank_path).unwrap();
    synthesize_dataset(&SynthesizeOptions {
        clear_dir: root.join("faces/clear"),
        labels_dir: Some(root.join("faces/labels")),
        landmarks_dir: Some(root.join("faces/landmarks")),
        kernel_bank_path: bank_path,
        degradation: DegradationConfig { rng_seed: 21, ..Default::default() },
        out_dir: root.join(out),
        pairs_per_image: Some(2),
        materialize,
        image_size: 32,
    })
    .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn artifacts_regenerate_bit_exactly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = build(a.path(), "ds", true);
    let mb = build(b.path(), "ds", true);
    assert_eq!(ma.entries.len(), 6);
    assert_eq!(ma.to_jsonl().unwrap(), mb.to_jsonl().unwrap());
    assert_eq!(files(a.path()), files(b.path()));

    let loaded = DatasetManifest::load(&a.path().join("ds/manifest.jsonl")).unwrap();
    assert_eq!(loaded.entries, ma.entries);
    assert!(loaded.has_labels());
    let ds = loaded.dataset().unwrap();
    for (i, e) in loaded.entries.iter().enumerate() {
        let stored = Image::load_png(&loaded.resolve(e.blurred_path.as_ref().unwrap())).unwrap();
        assert_eq!(ds.blurred(i).unwrap().quantize8(), stored, "entry {i}");
        assert_eq!(e.identity.as_deref(), Some(if i < 4 { "id000" } else { "id001" }));
    }
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), "ds", false);
    let path = dir.path().join("ds/manifest.jsonl");
    let mut broken = m.clone();
    broken.entries[0].kernel_id = 99;
    broken.save(&path).unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(Error::Input(_))));
    fs::write(&path, "{\"format\":\"other\"}\n").unwrap();
    assert!(DatasetManifest::load(&path).is_err());
    let mut missing = m;
    missing.entries[0].clear_path = "nope.png".into();
    missing.save(&path).unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(Error::Input(_))));
}

#[test]
fn batches_replay_from_seed_and_cursor() {
    let faces = synth_faces(5, 5, 32, 3);
    let samples = faces
        .into_iter()
        .map(|f| Sample { clear: f.image, labels: Some(f.labels), identity: Some(f.identity) })
        .collect();
    let bank = generate_kernel_bank(2, &[13], 4).unwrap();
    let ds = Dataset::in_memory(samples, bank, DegradationConfig::default()).unwrap();
    let pool: Vec<usize> = (0..ds.len()).collect();
    let mut a = Batches::new(&ds, pool.clone(), 3, Some(Augmentation::default()), 8).unwrap();
    let mut b = Batches::new(&ds, pool.clone(), 3, Some(Augmentation::default()), 8).unwrap();
    let mut seen = Vec::new();
    for _ in 0..4 {
        let (x, y) = (a.next_batch().unwrap(), b.next_batch().unwrap());
        assert_eq!(x.entries, y.entries);
        assert_eq!(x.blurred, y.blurred);
        assert_eq!(x.labels, y.labels);
        seen.extend(x.entries);
    }
    // The first epoch covers every entry exactly once.
    let mut epoch: Vec<usize> = seen[..10].to_vec();
    epoch.sort();
    assert_eq!(epoch, pool);

    let cursor = a.cursor();
    let next = a.next_batch().unwrap();
    let mut c = Batches::new(&ds, pool.clone(), 3, Some(Augmentation::default()), 8).unwrap();
    c.restore(pool.clone(), cursor).unwrap();
    let replay = c.next_batch().unwrap();
    assert_eq!(next.entries, replay.entries);
    assert_eq!(next.clear, replay.clear);
    assert!(Batches::new(&ds, pool.clone(), 0, None, 0).is_err());
    assert!(Batches::new(&ds, vec![], 2, None, 0).is_err());
}

#[test]
fn labels_encode_to_one_hot_and_back() {
    let labels = LabelMap::new(2, 3, vec![0, 1, 2, 9, 10, 4]).unwrap();
    let sem = encode_labels(&labels).unwrap();
    assert_eq!(sem.argmax(), labels);
    for p in 0..6 {
        let col: Vec<f64> = (0..NUM_CLASSES).map(|k| sem.channel(k)[p]).collect();
        assert_eq!(col.iter().sum::<f64>(), 1.0);
        assert_eq!(col[labels.data()[p] as usize], 1.0);
    }
    assert!(matches!(encode_labels(&LabelMap::new(1, 1, vec![11]).unwrap()), Err(Error::Label(_))));
    let half = resample_semantic(&SemanticMap::uniform(8, 8), (4, 4)).unwrap();
    assert!(half.validate().is_ok());
}

#[test]
fn kernel_bank_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bank = generate_kernel_bank(6, &[13, 17, 27], 2).unwrap();
    let p = dir.path().join("k.bin");
    bank.save(&p).unwrap();
    let back = KernelBank::load(&p, Split::Train).unwrap();
    assert_eq!(back, bank);
    let other = generate_kernel_bank(6, &[13, 17, 27], 3).unwrap();
    assert!(bank.is_disjoint_from(&other));
    assert_eq!(bank.ids_with_sizes(&[17]), vec![1, 4]);
}

//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=1,4,7` to run a subset.

mod common;

use std::time::{Duration, Instant};

use common::*;
use facedeblur::blur::{apply_blur, blur_unclipped, generate_kernel_bank, BlurKernel, Boundary, KERNEL_SIZES};
use facedeblur::checkpoint::Checkpoint;
use facedeblur::data::SemanticMap;
use facedeblur::deblur_net::{build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig, LayerRole};
use facedeblur::eval::metrics::mse;
use facedeblur::eval::{psnr, ssim, topk_recognition, Identified};
use facedeblur::experiments::{overfit_config, synthetic_dataset, training_set_psnr};
use facedeblur::features::IdentityExtractor;
use facedeblur::image::{Image, LabelMap};
use facedeblur::losses::*;
use facedeblur::parse_net::{fscore, ParsingModel, ParsingModelConfig};
use facedeblur::rng;
use facedeblur::tensor::Execution;
use facedeblur::trainer::*;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Degradation invariants.
fn degradation() -> Check {
    let bank = generate_kernel_bank(80, &KERNEL_SIZES, 17).map_err(err)?;
    let worst = bank.kernels().iter().map(|k| (k.sum() - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("kernel sum off by {worst:e}"))?;

    for (i, size) in KERNEL_SIZES.iter().enumerate() {
        let img = random_image(i as u64, 3, 32, 32);
        let out = apply_blur(&img, &BlurKernel::delta(*size), Boundary::Replicate).map_err(err)?;
        ensure(out == img, || format!("delta kernel {size} changed the image"))?;
    }
    for (i, k) in bank.kernels().iter().enumerate() {
        let v = (i as f64 + 0.5) / 80.0;
        let flat = Image::filled(3, 28, 28, v);
        let out = apply_blur(&flat, k, Boundary::Replicate).map_err(err)?;
        ensure(out == flat, || format!("kernel {i} moved the constant {v}"))?;
    }
    let mut worst_conv: f64 = 0.0;
    let mut r = rng::rng(5);
    for case in 0..50u64 {
        let size = [3, 5, 7, 9, 11, 13, 15][r.random_range(0..7)];
        let img = random_image(100 + case, 3, 16, 16);
        let k = if size >= 13 { bank.get(bank.ids_with_sizes(&[size])[0]).map_err(err)?.clone() } else { random_kernel(case, size) };
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = blur_unclipped(&img, &k, Boundary::Replicate, exec).map_err(err)?;
            let want = direct_blur(&img, &k);
            for (a, b) in got.data().iter().zip(want.data()) {
                worst_conv = worst_conv.max((a - b).abs());
            }
        }
    }
    ensure(worst_conv <= 1e-10, || format!("convolution differs from the direct loop by {worst_conv:e}"))?;
    Ok(format!("max |sum-1| {worst:.1e}, conv error {worst_conv:.1e}"))
}

// 2. Loss correctness.
fn losses() -> Check {
    let pixels = vec!["pixels".to_string()];
    let mut worst: f64 = 0.0;
    let mut r = rng::rng(9);
    for case in 0..20u64 {
        let p = random_image(1000 + case, 3, 8, 8);
        let g = random_image(2000 + case, 3, 8, 8);
        let sem = random_semantics(3000 + case, 8, 8);
        let pairs = [
            (content_loss(&p, &g).map_err(err)?, oracle_content(&p, &g)),
            (structural_loss(&p, &g, &sem).map_err(err)?, oracle_structural(&p, &g, &sem)),
            (perceptual_loss(&p, &g, &IdentityExtractor, &pixels).map_err(err)?, oracle_pixel_perceptual(&p, &g)),
        ];
        let (dr, df) = (r.random::<f64>(), r.random::<f64>());
        let (lg, ld) = adversarial_losses(dr, df).map_err(err)?;
        let (og, od) = oracle_adversarial(dr, df);
        for (a, b) in pairs.into_iter().chain([(lg, og), (ld, od)]) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("loss differs from its oracle by {worst:e}"))?;

    let mut t = || r.random::<f64>();
    let coarse = ScaleTerms { content: t(), structural: t(), perceptual: None, adversarial: None };
    let fine = ScaleTerms { content: t(), structural: t(), perceptual: Some(t()), adversarial: Some(t()) };
    let w1 = LossWeights { lambda_s: t(), lambda_p: t(), lambda_adv: t() };
    let w2 = LossWeights { lambda_s: t(), lambda_p: t(), lambda_adv: t() };
    let (a, b) = (t(), t());
    let mix = LossWeights {
        lambda_s: a * w1.lambda_s + b * w2.lambda_s,
        lambda_p: a * w1.lambda_p + b * w2.lambda_p,
        lambda_adv: a * w1.lambda_adv + b * w2.lambda_adv,
    };
    let base = coarse.content + fine.content;
    let f = |w: &LossWeights| total_loss(&coarse, &fine, w).map(|v| v - base).map_err(err);
    let lin = (f(&mix)? - (a * f(&w1)? + b * f(&w2)?)).abs();
    ensure(lin <= 1e-12, || format!("weight linearity off by {lin:e}"))?;

    let mut grad = Vec::new();
    for loss in [GradcheckLoss::Content, GradcheckLoss::Structural, GradcheckLoss::Perceptual, GradcheckLoss::Total] {
        let rep = finite_diff_gradcheck(loss, 7, 1e-3).map_err(err)?;
        ensure(rep.max_rel_error < 1e-6, || {
            format!("{loss:?} gradient relative error {:.2e} at {}[{}]", rep.max_rel_error, rep.worst_param, rep.worst_index)
        })?;
        grad.push(format!("{loss:?} {:.1e}", rep.max_rel_error));
    }
    Ok(format!("oracle error {worst:.1e}; gradient errors: {}", grad.join(", ")))
}

// 3. Architecture contracts.
fn architecture() -> Check {
    let gen = build_generator(&GeneratorConfig::default(), 0).map_err(err)?;
    let layers = gen.layers();
    let first: Vec<_> = layers.iter().filter(|l| l.role == LayerRole::First).collect();
    let inputs: Vec<usize> = first.iter().map(|l| l.layer.in_channels).collect();
    ensure(inputs == [14, 17], || format!("scale input channels {inputs:?}"))?;
    for l in layers.iter().filter(|l| matches!(l.role, LayerRole::Residual | LayerRole::Output)) {
        ensure(l.layer.kernel == 5 && l.layer.in_channels == 64, || format!("{} is {}x{}/{}", l.layer.name, l.layer.kernel, l.layer.kernel, l.layer.in_channels))?;
        if l.role == LayerRole::Residual {
            ensure(l.layer.out_channels == 64, || format!("{} has {} outputs", l.layer.name, l.layer.out_channels))?;
        }
    }
    let (o1, o2) = gen
        .forward_batch(&[&Image::filled(3, 128, 128, 0.5)], &[&SemanticMap::uniform(128, 128)])
        .map_err(err)?;
    ensure(o1.shape() == [1, 3, 64, 64] && o2.shape() == [1, 3, 128, 128], || {
        format!("outputs {:?} and {:?}", o1.shape(), o2.shape())
    })?;
    let disc = build_discriminator(&DiscriminatorConfig::default(), 0).map_err(err)?;
    let strided = disc.layers().iter().filter(|l| l.stride == 2).count();
    ensure(strided == 6, || format!("{strided} strided stages"))?;
    let imgs: Vec<Image> = (0..3).map(|i| random_image(i, 3, 128, 128)).collect();
    let probs = disc.probabilities(&imgs.iter().collect::<Vec<_>>()).map_err(err)?;
    ensure(probs.iter().all(|p| *p > 0.0 && *p < 1.0), || format!("probabilities {probs:?}"))?;
    Ok(format!("inputs {inputs:?}, outputs 64x64x3 / 128x128x3, discriminator {strided} stages"))
}

// 4. Schedule.
fn schedule() -> Check {
    let s = KernelSchedule::default();
    ensure(s.period == 30_000, || format!("period {}", s.period))?;
    // Walk every iteration up to one period past saturation, tracking the
    // expected bucket count incrementally.
    let mut expected = 1usize;
    let last = s.saturation_iter() + s.period;
    for iter in 0..=last {
        if iter > 0 && iter % 30_000 == 0 && expected < KERNEL_SIZES.len() {
            expected += 1;
        }
        let got = s.active_buckets(iter);
        ensure(got == expected, || format!("iteration {iter}: {got} buckets, expected {expected}"))?;
    }
    let mut prev: Vec<usize> = Vec::new();
    for b in 0..=KERNEL_SIZES.len() as u64 + 1 {
        for iter in [(b * 30_000).saturating_sub(1), b * 30_000, b * 30_000 + 1] {
            let got = active_kernel_subset(&s, iter);
            ensure(got == oracle_schedule(&KERNEL_SIZES, 30_000, iter), || format!("iteration {iter}: {got:?}"))?;
            ensure(got.starts_with(&prev), || format!("iteration {iter} is not monotone"))?;
            prev = got;
        }
    }
    let end = active_kernel_subset(&s, 17_000_000);
    ensure(end == KERNEL_SIZES, || format!("final subset {end:?}"))?;
    Ok(format!("{} iterations walked, saturates at {}", last + 1, s.saturation_iter()))
}

const OVERFIT_ITERS: u64 = 3000;
const OVERFIT_SIZE: usize = 32;

fn overfit_run(source: SemanticSource, seed: u64) -> Result<(f64, f64), String> {
    let mut ds = synthetic_dataset(8, OVERFIT_SIZE, 1, 13, seed).map_err(err)?;
    ds.cache_blurred().map_err(err)?;
    let cfg = overfit_config(OVERFIT_SIZE, OVERFIT_ITERS, source, seed);
    let mut t = DeblurTrainer::new(&cfg, &ds, None).map_err(err)?;
    for _ in 0..OVERFIT_ITERS {
        t.step().map_err(err)?;
    }
    training_set_psnr(&t, &ds).map_err(err)
}

// 5. Overfit experiment.
fn overfit(cache: &mut Option<(f64, f64)>) -> Check {
    let (blurred, deblurred) = overfit_run(SemanticSource::GroundTruth, 0)?;
    *cache = Some((blurred, deblurred));
    let gain = deblurred - blurred;
    ensure(gain >= 3.0, || format!("gain {gain:.2} dB (blurred {blurred:.2}, deblurred {deblurred:.2})"))?;
    Ok(format!("blurred {blurred:.2} dB -> deblurred {deblurred:.2} dB (+{gain:.2})"))
}

// 6. Semantic sensitivity.
fn semantic_sensitivity(seed0: Option<(f64, f64)>) -> Check {
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let gt = match (seed, seed0) {
            (0, Some(r)) => r.1,
            _ => overfit_run(SemanticSource::GroundTruth, seed)?.1,
        };
        with.push(gt);
        without.push(overfit_run(SemanticSource::Uniform, seed)?.1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    let detail = format!("semantic {a:.2} dB vs uniform {b:.2} dB (per seed {with:.2?} / {without:.2?})");
    ensure(a >= b, || detail.clone())?;
    Ok(detail)
}

// 7. Metric oracles.
fn metrics() -> Check {
    let a = Image::filled(3, 16, 16, 0.25);
    let b = Image::filled(3, 16, 16, 0.35);
    let (m, p) = (mse(&a, &b).map_err(err)?, psnr(&a, &b).map_err(err)?);
    ensure((p - 20.0).abs() <= 1e-12, || format!("MSE {m} gives {p} dB"))?;
    let mut worst: f64 = 0.0;
    for case in 0..4 {
        let x = random_image(case, 3, 24, 20);
        let self_sim = ssim(&x, &x).map_err(err)?;
        ensure((self_sim - 1.0).abs() <= 1e-9, || format!("self-SSIM {self_sim}"))?;
        let y = random_image(50 + case, 3, 24, 20);
        let mut z = x.clone();
        z.data_mut().iter_mut().zip(y.data()).for_each(|(v, w)| *v = 0.8 * *v + 0.2 * w);
        for other in [&y, &z] {
            worst = worst.max((ssim(&x, other).map_err(err)? - oracle_ssim(&x, other)).abs());
        }
    }
    ensure(worst <= 1e-7, || format!("SSIM differs from the transcription by {worst:e}"))?;

    let mut r = rng::rng(3);
    let mut trials = 0;
    for _ in 0..50 {
        let gallery: Vec<(Vec<f64>, String)> =
            (0..15).map(|i| ((0..4).map(|_| r.random_range(0..3) as f64).collect(), format!("p{}", i % 5))).collect();
        let probes: Vec<(Vec<f64>, String)> = (0..8)
            .map(|_| ((0..4).map(|_| r.random_range(0..3) as f64).collect(), format!("p{}", r.random_range(0..5))))
            .collect();
        let wrap = |v: &[(Vec<f64>, String)]| {
            v.iter().map(|(e, id)| Identified { embedding: e.clone(), identity: id.clone() }).collect::<Vec<_>>()
        };
        for k in 1..=6 {
            let got = topk_recognition(&wrap(&probes), &wrap(&gallery), k).map_err(err)?;
            let want = oracle_topk(&probes, &gallery, k);
            ensure(got == want, || format!("top-{k}: {got} vs exhaustive {want}"))?;
            trials += 1;
        }
    }
    Ok(format!("PSNR {p} dB, SSIM error {worst:.1e}, {trials} top-K comparisons exact"))
}

// 8. Parsing smoke.
fn parsing() -> Check {
    let gt = LabelMap::new(2, 2, vec![4, 4, 0, 0]).map_err(err)?;
    let miss = LabelMap::new(2, 2, vec![0, 0, 4, 4]).map_err(err)?;
    let over = LabelMap::new(2, 2, vec![4, 4, 4, 4]).map_err(err)?;
    let scores = [fscore(&gt, &gt, 4), fscore(&miss, &gt, 4), fscore(&over, &gt, 4)];
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_, _>>().map_err(err)?;
    ensure(scores == [1.0, 0.0, 2.0 / 3.0], || format!("F-scores {scores:?}"))?;

    let ds = synthetic_dataset(1, 32, 1, 13, 11).map_err(err)?;
    let cfg = ParsingModelConfig { encoder_depth: 3, base_channels: 16, image_size: 32, ..Default::default() };
    let mut model = ParsingModel::<f32>::build(&cfg, 0).map_err(err)?;
    let opts = ParseTrainOptions {
        iters: 2000,
        lr: 3e-3,
        batch_size: 1,
        seed: 0,
        augment: false,
        blurred_inputs: false,
        optimizer: Default::default(),
        eval_every: 25,
        patience: usize::MAX,
        target_accuracy: Some(0.99),
        val_entries: vec![0],
        checkpoint_every: 0,
        out_dir: None,
    };
    let report = train_parsing(&mut model, &ds, &opts).map_err(err)?;
    let acc = report.evals.last().map(|e| e.accuracy).unwrap_or(0.0);
    ensure(acc >= 0.99, || format!("pixel accuracy {acc:.4} after {} iterations", report.iters_run))?;
    Ok(format!("F-scores {scores:.4?}; accuracy {acc:.4} after {} iterations", report.iters_run))
}

// 9. Reproducibility.
fn reproducibility() -> Check {
    let mut ds = synthetic_dataset(4, 32, 2, 13, 3).map_err(err)?;
    ds.cache_blurred().map_err(err)?;
    let cfg = TrainConfig {
        batch_size: 2,
        lr_deblur: 1e-3,
        total_iters: 8,
        semantic_source: SemanticSource::GroundTruth,
        generator: GeneratorConfig { resblocks_per_scale: 1, first_conv_kernel: 5, channels: 4, image_size: 32, ..Default::default() },
        discriminator: DiscriminatorConfig { input_size: 32, kernel: 3, base_channels: 4, max_channels: 8, ..Default::default() },
        parsing: ParsingModelConfig { encoder_depth: 2, base_channels: 4, image_size: 32, ..Default::default() },
        ..Default::default()
    };
    let mut full = DeblurTrainer::new(&cfg, &ds, None).map_err(err)?;
    let straight: Vec<StepLosses> = (0..8).map(|_| full.step()).collect::<Result<_, _>>().map_err(err)?;
    let mut half = DeblurTrainer::new(&cfg, &ds, None).map_err(err)?;
    for _ in 0..4 {
        half.step().map_err(err)?;
    }
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("state.ckpt");
    let state = half.state_checkpoint().map_err(err)?;
    state.save(&path).map_err(err)?;
    let loaded = Checkpoint::load(&path, None).map_err(err)?;
    ensure(loaded.to_bytes() == state.to_bytes(), || "save/load/save is not byte-identical".into())?;
    let mut resumed = DeblurTrainer::resume(&loaded, &ds, None).map_err(err)?;
    for want in &straight[4..] {
        let got = resumed.step().map_err(err)?;
        ensure(&got == want, || format!("iteration {}: resumed {:?} vs {:?}", want.iter, got, want))?;
    }

    let build = |root: &std::path::Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let faces = facedeblur::synthetic::synth_faces(3, 3, 40, 2);
        facedeblur::synthetic::write_faces(&root.join("faces"), &faces).map_err(err)?;
        let bank = root.join("bank.bin");
        generate_kernel_bank(3, &[13, 15], 4).map_err(err)?.save(&bank).map_err(err)?;
        facedeblur::data::synthesize_dataset(&facedeblur::data::SynthesizeOptions {
            clear_dir: root.join("faces/clear"),
            labels_dir: Some(root.join("faces/labels")),
            landmarks_dir: Some(root.join("faces/landmarks")),
            kernel_bank_path: bank,
            degradation: Default::default(),
            out_dir: root.join("ds"),
            pairs_per_image: None,
            materialize: true,
            image_size: 32,
        })
        .map_err(err)?;
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).map_err(err)? {
                let p = e.map_err(err)?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(root).map_err(err)?.display().to_string(), std::fs::read(&p).map_err(err)?));
                }
            }
        }
        files.sort();
        Ok(files)
    };
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let (fa, fb) = (build(a.path())?, build(b.path())?);
    ensure(fa == fb, || "regenerated dataset artifacts differ".into())?;
    let manifest = facedeblur::data::DatasetManifest::load(&a.path().join("ds/manifest.jsonl")).map_err(err)?;
    let data = manifest.dataset().map_err(err)?;
    for (i, e) in manifest.entries.iter().enumerate() {
        let stored = Image::load_png(&manifest.resolve(e.blurred_path.as_ref().expect("materialized"))).map_err(err)?;
        ensure(data.blurred(i).map_err(err)?.quantize8() == stored, || format!("entry {i} does not regenerate"))?;
    }
    Ok(format!("{} resumed iterations identical; {} artifact files regenerate bit-exactly", straight.len() - 4, fa.len()))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut failed = 0;
    let mut seed0 = None;
    let c5_limit = Duration::from_secs(2 * 3600);
    let criteria: Vec<(usize, &str, Duration)> = vec![
        (1, "degradation invariants", Duration::from_secs(10)),
        (2, "loss correctness", Duration::from_secs(120)),
        (3, "architecture contracts", Duration::from_secs(10)),
        (4, "schedule correctness", Duration::from_secs(1)),
        (5, "overfit experiment", c5_limit),
        (6, "semantic sensitivity", 2 * c5_limit),
        (7, "metric oracles", Duration::from_secs(30)),
        (8, "parsing smoke", Duration::from_secs(600)),
        (9, "reproducibility", Duration::from_secs(300)),
    ];
    for (n, name, limit) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let result = match n {
            1 => degradation(),
            2 => losses(),
            3 => architecture(),
            4 => schedule(),
            5 => overfit(&mut seed0),
            6 => semantic_sensitivity(seed0),
            7 => metrics(),
            8 => parsing(),
            _ => reproducibility(),
        };
        let took = start.elapsed();
        let result = result.and_then(|d| {
            if took <= limit {
                Ok(d)
            } else {
                Err(format!("{d}; over the time limit"))
            }
        });
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} ({name}): {tag} [{:.1} s, limit {} s] {detail}", took.as_secs_f64(), limit.as_secs());
        failed += result.is_err() as usize;
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

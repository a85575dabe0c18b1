use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, ensure, Context, Result};
use facedeblur::blur::{generate_kernel_bank, DegradationConfig};
use facedeblur::checkpoint::{load_generator, load_parser};
use facedeblur::data::{encode_labels, synthesize_dataset, DatasetManifest, SemanticMap, SynthesizeOptions};
use facedeblur::deblur_net::Generator;
use facedeblur::eval::parsing::{blurred_inputs, clear_inputs};
use facedeblur::eval::plot::{bar_plot, line_plot};
use facedeblur::eval::{
    evaluate_with, identity_distance, parsing_fscores, DownsampleEmbedder, FscoreTable, MetricsReport, ReportMeta,
};
use facedeblur::image::{Image, LabelMap};
use facedeblur::parse_net::ParsingModel;
use facedeblur::rng::derive_seed;
use facedeblur::synthetic::{synth_faces, write_faces};
use facedeblur::trainer::{train_deblurring, train_parsing, ParseTrainOptions, SemanticSource, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::*;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SynthKernels(a) => synth_kernels(a, seed.unwrap_or(0)),
        Command::SynthFaces(a) => synth_faces_cmd(a, seed.unwrap_or(0)),
        Command::BuildDataset(a) => build_dataset(a, seed.unwrap_or(0)),
        Command::TrainParse(a) => train_parse(a, seed),
        Command::EvalParse(a) => eval_parse(a),
        Command::TrainDeblur(a) => train_deblur(a, seed),
        Command::Evaluate(a) => evaluate(a),
        Command::Deblur(a) => deblur(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes the effective settings of a command next to its outputs.
fn echo_config(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn synth_kernels(a: SynthKernels, seed: u64) -> Result<()> {
    let bank = generate_kernel_bank(a.count, &a.sizes, seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    bank.save(&a.out)?;
    if let Some(dir) = &a.dump_png {
        create_dir(dir)?;
        for (i, k) in bank.kernels().iter().enumerate() {
            k.to_image().save_png(&dir.join(format!("kernel_{i:03}_k{}.png", k.size())))?;
        }
    }
    log::info!("wrote {} kernels to {}", a.count, a.out.display());
    Ok(())
}

fn synth_faces_cmd(a: SynthFaces, seed: u64) -> Result<()> {
    ensure!(a.count > 0 && a.identities > 0, "--count and --identities must be >= 1");
    let faces = synth_faces(a.count, a.identities, a.size, seed);
    write_faces(&a.out, &faces)?;
    echo_config(&a.out, "synth_faces.json", &serde_json::json!({ "args": a, "seed": seed }))?;
    log::info!("wrote {} faces to {}", faces.len(), a.out.display());
    Ok(())
}

fn build_dataset(a: BuildDataset, seed: u64) -> Result<()> {
    create_dir(&a.out)?;
    let degradation = DegradationConfig { noise_sigma: a.noise_sigma, rng_seed: seed, ..Default::default() };
    let manifest = synthesize_dataset(&SynthesizeOptions {
        clear_dir: a.clear.clone(),
        labels_dir: a.labels.clone(),
        landmarks_dir: a.landmarks.clone(),
        kernel_bank_path: a.kernels.clone(),
        degradation,
        out_dir: a.out.clone(),
        pairs_per_image: a.pairs_per_image,
        materialize: a.materialize,
        image_size: a.image_size,
    })?;
    echo_config(&a.out, "build_dataset.json", &serde_json::json!({ "args": a, "degradation": degradation }))?;
    log::info!("{} entries in {}", manifest.entries.len(), a.out.join("manifest.jsonl").display());
    Ok(())
}

/// Config file (or defaults) with the global seed applied.
fn base_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(manifest: &Path) -> Result<facedeblur::data::Dataset> {
    let m = DatasetManifest::load(manifest)?;
    Ok(m.dataset()?)
}

fn train_parse(a: TrainParse, seed: Option<u64>) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref(), seed)?;
    if let Some(v) = a.iters {
        cfg.parse_iters = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_parsing = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    let ds = load_dataset(&a.manifest)?;
    let mut model = match &a.init {
        Some(p) => load_parser(p)?,
        None => ParsingModel::build(&cfg.parsing, derive_seed(cfg.seed, 0x9A))?,
    };
    create_dir(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    let opts =
        ParseTrainOptions { blurred_inputs: a.blurred, out_dir: Some(a.out.clone()), ..ParseTrainOptions::from_config(&cfg) };
    let report = train_parsing(&mut model, &ds, &opts)?;
    echo_config(&a.out, "train_parse.json", &serde_json::json!({ "args": a, "stop_reason": report.stop_reason }))?;
    if let Some(last) = report.evals.last() {
        log::info!("stopped after {} iterations ({}): accuracy {:.4}", report.iters_run, report.stop_reason, last.accuracy);
    }
    Ok(())
}

fn eval_parse(a: EvalParse) -> Result<()> {
    let ds = load_dataset(&a.manifest)?;
    ensure!(ds.has_labels(), "{} has no label maps", a.manifest.display());
    let pre = load_parser(&a.pretrained)?;
    let clear = clear_inputs(&ds);
    let blurred = blurred_inputs(&ds)?;
    let mut table = FscoreTable {
        columns: vec!["clear/pre-trained".into(), "blurred/pre-trained".into()],
        scores: vec![parsing_fscores(&pre, &clear)?, parsing_fscores(&pre, &blurred)?],
    };
    if let Some(p) = &a.finetuned {
        table.columns.push("blurred/fine-tuned".into());
        table.scores.push(parsing_fscores(&load_parser(p)?, &blurred)?);
    }
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    table.write_csv(&a.report)?;
    if a.json {
        let rows: Vec<BTreeMap<String, String>> = table
            .rows()
            .into_iter()
            .map(|r| {
                let mut m = BTreeMap::from([("component".to_string(), r[0].clone())]);
                m.extend(table.columns.iter().cloned().zip(r[1..].iter().cloned()));
                m
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
    }
    Ok(())
}

fn train_deblur(a: TrainDeblur, seed: Option<u64>) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref(), seed)?;
    if let Some(v) = a.iters {
        cfg.total_iters = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_deblur = v;
    }
    if let Some(s) = a.semantics {
        cfg.semantic_source = match s {
            Semantics::Parser => SemanticSource::Parser,
            Semantics::GroundTruth => SemanticSource::GroundTruth,
            Semantics::Uniform => SemanticSource::Uniform,
        };
    }
    if a.no_incremental {
        cfg.incremental = false;
    }
    cfg.validate()?;
    let ds = load_dataset(&a.manifest)?;
    let parser = a.parse_ckpt.as_deref().map(load_parser).transpose()?;
    if cfg.semantic_source == SemanticSource::Parser && parser.is_none() {
        bail!("parser semantics need --parse-ckpt");
    }
    create_dir(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    echo_config(&a.out, "train_deblur.json", &a)?;
    let history = train_deblurring(&cfg, &ds, parser.as_ref(), a.resume.as_deref(), Some(a.out.clone()))?;
    if let Some(last) = history.last() {
        log::info!("finished at iteration {} with total loss {:.5}", last.iter + 1, last.total);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct IdentityRow {
    entry_id: usize,
    kernel_size: usize,
    blurred: f64,
    deblurred: f64,
}

/// Semantic input for one blurred image.
fn semantics_for(parser: Option<&ParsingModel<f32>>, img: &Image) -> Result<SemanticMap> {
    Ok(match parser {
        Some(p) => p.parse_batch(&[img])?.remove(0),
        None => SemanticMap::uniform(img.height(), img.width()),
    })
}

fn restore(gen: &Generator<f32>, sem: &SemanticMap, img: &Image) -> Result<Image> {
    Ok(gen.deblur_batch(&[img], &[sem])?.remove(0).1)
}

fn evaluate(a: Evaluate) -> Result<()> {
    let m = DatasetManifest::load(&a.manifest)?;
    let ds = m.dataset()?;
    let gen = load_generator(&a.gen_ckpt)?;
    let parser = a.parse_ckpt.as_deref().map(load_parser).transpose()?;
    ensure!(
        gen.config().image_size == m.image_size,
        "generator expects {} px images, the dataset has {} px",
        gen.config().image_size,
        m.image_size
    );
    let embedder = DownsampleEmbedder::default();
    let ids = Mutex::new(Vec::new());
    let entries: Vec<usize> = (0..ds.len()).collect();
    let mut report = evaluate_with(&ds, &entries, |blurred, e| {
        let sem = semantics_for(parser.as_ref(), blurred).map_err(|err| facedeblur::Error::Input(err.to_string()))?;
        let out = restore(&gen, &sem, blurred).map_err(|err| facedeblur::Error::Input(err.to_string()))?;
        let clear = ds.clear(e);
        // Constant images have no embedding; they are skipped, not fatal.
        if let (Ok(b), Ok(d)) = (identity_distance(&embedder, clear, blurred), identity_distance(&embedder, clear, &out)) {
            ids.lock().expect("poisoned").push(IdentityRow { entry_id: e, kernel_size: ds.kernel_size(e), blurred: b, deblurred: d });
        }
        Ok(out)
    });
    report.meta = ReportMeta {
        checkpoint: Some(a.gen_ckpt.display().to_string()),
        manifest: Some(a.manifest.display().to_string()),
    };
    create_dir(&a.out)?;
    report.write_csv(&a.out.join("metrics.csv"))?;
    report.write_json(&a.out.join("metrics.json"))?;
    let mut rows = ids.into_inner().expect("poisoned");
    rows.sort_by_key(|r| r.entry_id);
    let mut w = csv::Writer::from_path(a.out.join("identity.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    echo_config(&a.out, "evaluate.json", &a)?;
    for (e, msg) in &report.failures {
        log::warn!("entry {e} failed: {msg}");
    }
    if a.json {
        println!("{}", report.aggregates_json()?);
    } else {
        log::info!("{} images: PSNR {:.3} dB, SSIM {:.4}", report.count, report.mean_psnr, report.mean_ssim);
    }
    Ok(())
}

fn deblur(a: Deblur) -> Result<()> {
    let gen = load_generator(&a.gen_ckpt)?;
    let size = gen.config().image_size;
    let img = Image::load_png(&a.input)?;
    ensure!(
        img.height() == size && img.width() == size,
        "{} is {}x{}; the generator takes aligned {size}x{size} faces",
        a.input.display(),
        img.width(),
        img.height()
    );
    let sem = match (&a.parse_ckpt, &a.semantics) {
        (Some(p), _) => semantics_for(Some(&load_parser(p)?), &img)?,
        (None, Some(p)) => {
            let labels = LabelMap::load_png(p)?;
            ensure!(labels.height() == size && labels.width() == size, "label map must be {size}x{size}");
            encode_labels(&labels)?
        }
        (None, None) => unreachable!("clap requires a semantic input"),
    };
    let out = restore(&gen, &sem, &img)?;
    out.save_png(&a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct IdentitySummary {
    count: usize,
    mean_blurred: f64,
    mean_deblurred: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn read_identity(path: &PathBuf) -> Result<Vec<IdentityRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.with_context(|| format!("parsing {}", path.display()))).collect()
}

fn report(a: Report) -> Result<()> {
    if a.metrics.is_empty() && a.identity.is_empty() {
        bail!("nothing to report: pass --metrics and/or --identity");
    }
    create_dir(&a.out)?;
    let mut quality = BTreeMap::new();
    for (name, path) in &a.metrics {
        let rows = MetricsReport::read_csv(path)?;
        quality.insert(name.clone(), MetricsReport::from_rows(rows, Vec::new(), ReportMeta::default()));
    }
    let mut identity = BTreeMap::new();
    for (name, path) in &a.identity {
        let rows = read_identity(path)?;
        identity.insert(
            name.clone(),
            IdentitySummary {
                count: rows.len(),
                mean_blurred: mean(rows.iter().map(|r| r.blurred)),
                mean_deblurred: mean(rows.iter().map(|r| r.deblurred)),
            },
        );
    }
    let quality_json: BTreeMap<&String, serde_json::Value> = quality
        .iter()
        .map(|(k, r)| Ok((k, serde_json::from_str(&r.aggregates_json()?)?)))
        .collect::<Result<_>>()?;
    let summary = serde_json::json!({ "quality": quality_json, "identity": identity });
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(a.out.join("summary.json"), &text)?;
    if a.plot {
        for (file, label, pick) in [
            ("psnr_vs_kernel_size.svg", "PSNR (dB)", (|s: &facedeblur::eval::SizeAggregate| s.mean_psnr) as fn(&_) -> f64),
            ("ssim_vs_kernel_size.svg", "SSIM", |s| s.mean_ssim),
        ] {
            let series: Vec<(String, Vec<(f64, f64)>)> = quality
                .iter()
                .map(|(name, r)| (name.clone(), r.per_size.iter().map(|s| (s.kernel_size as f64, pick(s))).collect()))
                .collect();
            if !series.is_empty() {
                fs::write(a.out.join(file), line_plot(&format!("{label} by kernel size"), "kernel size", label, &series))?;
            }
        }
        let mut bars = Vec::new();
        if let Some((_, first)) = identity.iter().next() {
            bars.push(("blurred".to_string(), first.mean_blurred));
        }
        bars.extend(identity.iter().map(|(name, s)| (name.clone(), s.mean_deblurred)));
        if !bars.is_empty() {
            fs::write(a.out.join("identity_distance.svg"), bar_plot("Identity distance to the clear face", "distance", &bars))?;
        }
    }
    if a.json {
        println!("{text}");
    }
    Ok(())
}

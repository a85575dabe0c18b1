use facedeblur::checkpoint::{parser_checkpoint, Checkpoint, CheckpointKind};
use facedeblur::deblur_net::{Discriminator, DiscriminatorConfig, GeneratorConfig};
use facedeblur::experiments::synthetic_dataset;
use facedeblur::parse_net::{ParsingModel, ParsingModelConfig};
use facedeblur::tensor::{Graph, Tensor};
use facedeblur::trainer::*;
use facedeblur::Error;

const SIZE: usize = 32;

/// Every loss term on, a few channels everywhere.
fn tiny_config(source: SemanticSource) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        lr_deblur: 1e-3,
        total_iters: 6,
        semantic_source: source,
        kernel_sizes: vec![13, 15],
        kernel_period: 3,
        log_every: 2,
        checkpoint_every: 3,
        val_size: 2,
        generator: GeneratorConfig { resblocks_per_scale: 1, first_conv_kernel: 5, channels: 4, image_size: SIZE, ..Default::default() },
        discriminator: DiscriminatorConfig { input_size: SIZE, kernel: 3, base_channels: 4, max_channels: 8, ..Default::default() },
        parsing: ParsingModelConfig { encoder_depth: 2, base_channels: 4, image_size: SIZE, ..Default::default() },
        ..Default::default()
    }
}

fn parser() -> ParsingModel<f32> {
    ParsingModel::build(&tiny_config(SemanticSource::Parser).parsing, 5).unwrap()
}

#[test]
fn parser_stays_frozen() {
    let mut ds = synthetic_dataset(4, SIZE, 2, 13, 1).unwrap();
    ds.cache_blurred().unwrap();
    let p = parser();
    let before = p.store().checksum();
    let bytes = parser_checkpoint(&p, &"").unwrap().to_bytes();
    let cfg = TrainConfig { total_iters: 100, ..tiny_config(SemanticSource::Parser) };
    let mut t = DeblurTrainer::new(&cfg, &ds, Some(&p)).unwrap();
    let history = t.run(None).unwrap();
    assert_eq!(history.len(), 100);
    assert!(history.iter().all(|l| l.total.is_finite() && l.adversarial.is_some() && l.perceptual.is_some()));
    assert_eq!(p.store().checksum(), before);
    assert_eq!(parser_checkpoint(&p, &"").unwrap().to_bytes(), bytes);
}

#[test]
fn curriculum_widens_the_pool() {
    let ds = synthetic_dataset(3, SIZE, 4, 13, 2).unwrap();
    // A bank with one size: sizes absent from the data are dropped.
    let cfg = tiny_config(SemanticSource::GroundTruth);
    let mut t = DeblurTrainer::new(&cfg, &ds, None).unwrap();
    assert_eq!(t.schedule().size_groups, vec![13]);
    let l = t.step().unwrap();
    assert_eq!(l.active_sizes, vec![13]);

    let bad = TrainConfig { kernel_sizes: vec![27], ..cfg };
    assert!(matches!(DeblurTrainer::new(&bad, &ds, None), Err(Error::Config(_))));
}

#[test]
fn resumed_run_replays_batches_and_losses() {
    let mut ds = synthetic_dataset(4, SIZE, 2, 13, 3).unwrap();
    ds.cache_blurred().unwrap();
    let cfg = TrainConfig { augment: true, ..tiny_config(SemanticSource::GroundTruth) };

    let mut full = DeblurTrainer::new(&cfg, &ds, None).unwrap();
    let straight: Vec<StepLosses> = (0..6).map(|_| full.step().unwrap()).collect();

    let mut first = DeblurTrainer::new(&cfg, &ds, None).unwrap();
    for _ in 0..3 {
        first.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let state = first.state_checkpoint().unwrap();
    state.save(&path).unwrap();
    let loaded = Checkpoint::load(&path, Some(CheckpointKind::Training)).unwrap();
    assert_eq!(loaded.to_bytes(), state.to_bytes());

    let mut resumed = DeblurTrainer::resume(&loaded, &ds, None).unwrap();
    assert_eq!(resumed.iter(), 3);
    for want in &straight[3..] {
        let got = resumed.step().unwrap();
        assert_eq!(&got, want);
    }
    assert_eq!(resumed.generator().store().checksum(), full.generator().store().checksum());
    assert_eq!(resumed.discriminator().store().checksum(), full.discriminator().store().checksum());
    assert!(matches!(
        DeblurTrainer::resume(&parser_checkpoint(&parser(), &"").unwrap(), &ds, None),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn training_writes_outputs_and_extends_on_resume() {
    let ds = synthetic_dataset(2, SIZE, 1, 13, 4).unwrap();
    let cfg = tiny_config(SemanticSource::Uniform);
    let dir = tempfile::tempdir().unwrap();
    train_deblurring(&cfg, &ds, None, None, Some(dir.path().to_path_buf())).unwrap();
    for f in ["train_state.ckpt", "generator.ckpt", "discriminator.ckpt", "metrics.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(csv.lines().count(), 1 + 6);

    let longer = TrainConfig { total_iters: 8, ..cfg };
    let state = dir.path().join("train_state.ckpt");
    let hist = train_deblurring(&longer, &ds, None, Some(&state), Some(dir.path().to_path_buf())).unwrap();
    assert_eq!(hist.iter().map(|l| l.iter).collect::<Vec<_>>(), vec![6, 7]);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
}

/// Mean `D(real) - D(fake)`.
fn margin(d: &Discriminator<f32>, real: &Tensor<f32>, fake: &Tensor<f32>) -> f64 {
    let mean = |t: &Tensor<f32>| {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let p = d.forward_graph(&mut g, x, false).unwrap();
        g.value(p).data().iter().map(|&v| v as f64).sum::<f64>() / t.shape()[0] as f64
    };
    mean(real) - mean(fake)
}

#[test]
fn discriminator_step_separates_real_from_fake() {
    let ds = synthetic_dataset(4, SIZE, 1, 13, 6).unwrap();
    let cfg = tiny_config(SemanticSource::Uniform);
    let t = DeblurTrainer::new(&cfg, &ds, None).unwrap();
    let blurred: Vec<_> = (0..4).map(|e| ds.blurred(e).unwrap()).collect();
    let brefs: Vec<_> = blurred.iter().collect();
    let sems = t.semantics(&brefs, &[None, None, None, None]).unwrap();
    let srefs: Vec<_> = sems.iter().collect();
    let (_, fake) = t.generator().forward_batch(&brefs, &srefs).unwrap();
    let real = Tensor::stack_batch(&(0..4).map(|e| ds.clear(e).to_tensor()).collect::<Vec<_>>()).unwrap();

    let mut gain = 0.0;
    for trial in 0..20u64 {
        let mut d = Discriminator::<f32>::build(&cfg.discriminator, 100 + trial).unwrap();
        let mut adam = cfg.optimizer.adam(d.store(), 1e-3);
        let before = margin(&d, &real, &fake);
        discriminator_step(&mut d, &mut adam, &real, &fake).unwrap();
        gain += margin(&d, &real, &fake) - before;
    }
    assert!(gain / 20.0 > 0.0, "mean margin change {}", gain / 20.0);
}

#[test]
fn semantic_source_requirements() {
    let ds = synthetic_dataset(2, SIZE, 1, 13, 7).unwrap();
    let cfg = tiny_config(SemanticSource::Parser);
    assert!(matches!(DeblurTrainer::new(&cfg, &ds, None), Err(Error::Config(_))));
    let wrong = ParsingModel::build(&ParsingModelConfig { encoder_depth: 2, base_channels: 4, image_size: 64, ..Default::default() }, 0)
        .unwrap();
    assert!(matches!(DeblurTrainer::new(&cfg, &ds, Some(&wrong)), Err(Error::Config(_))));
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(SemanticSource::GroundTruth);
    let p = dir.path().join("c.toml");
    std::fs::write(&p, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(TrainConfig::load(&p).unwrap(), cfg);
    let j = dir.path().join("c.json");
    std::fs::write(&j, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(TrainConfig::load(&j).unwrap(), cfg);
    std::fs::write(&p, "batch_size = 4\nbogus = 1\n").unwrap();
    assert!(matches!(TrainConfig::load(&p), Err(Error::Format { .. })));
    std::fs::write(&p, "batch_size = 0\n").unwrap();
    assert!(matches!(TrainConfig::load(&p), Err(Error::Config(_))));
    let mismatch = TrainConfig { discriminator: DiscriminatorConfig::default(), ..cfg };
    assert!(mismatch.validate().is_err());
}

#[test]
fn default_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!(c.batch_size, 16);
    assert_eq!((c.lr_parsing, c.lr_deblur), (5e-6, 4e-5));
    assert_eq!(c.total_iters, 17_000_000);
    assert_eq!(c.kernel_period, 30_000);
    assert_eq!(c.parse_iters, 60_000);
    assert_eq!(c.perceptual_layers, vec!["pool2", "pool5"]);
    assert_eq!(c.semantic_source, SemanticSource::Parser);
    assert!(c.incremental);
    assert!(c.validate().is_ok());
}

#[test]
fn parsing_training_overfits_and_checkpoints() {
    let ds = synthetic_dataset(1, 16, 1, 13, 8).unwrap();
    let mut m = ParsingModel::<f32>::build(
        &ParsingModelConfig { encoder_depth: 2, base_channels: 8, image_size: 16, ..Default::default() },
        1,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = ParseTrainOptions {
        iters: 150,
        lr: 1e-2,
        batch_size: 1,
        seed: 0,
        augment: false,
        blurred_inputs: false,
        optimizer: Default::default(),
        eval_every: 50,
        patience: 100,
        target_accuracy: None,
        val_entries: vec![0],
        checkpoint_every: 50,
        out_dir: Some(dir.path().to_path_buf()),
    };
    let r = train_parsing(&mut m, &ds, &opts).unwrap();
    assert_eq!(r.iters_run, 150);
    assert!(r.loss_history.iter().all(|l| l.is_finite()));
    let ma = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(ma(&r.loss_history[140..]) < 0.5 * ma(&r.loss_history[..10]));
    let (_, acc) = evaluate_parser(&m, &ds, &[0], false).unwrap();
    assert_eq!(acc, r.evals.last().unwrap().accuracy);
    let back = facedeblur::checkpoint::load_parser(&dir.path().join("parse.ckpt")).unwrap();
    assert_eq!(back.store().checksum(), m.store().checksum());
    assert!(dir.path().join("parse_loss.csv").is_file());

    let unlabelled = facedeblur::data::Dataset::in_memory(
        vec![facedeblur::data::Sample { clear: ds.clear(0).clone(), labels: None, identity: None }],
        ds.bank().clone(),
        Default::default(),
    )
    .unwrap();
    assert!(matches!(train_parsing(&mut m, &unlabelled, &opts), Err(Error::Config(_))));
}

use std::path::{Path, PathBuf};

use facedeblur_tensor::{Adam, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{generator_checkpoint, Checkpoint, CheckpointKind};
use crate::data::{encode_labels, resample_semantic, Batch, Batches, Augmentation, Dataset, EpochCursor, SemanticMap};
use crate::deblur_net::{Discriminator, Generator};
use crate::error::{Error, Result};
use crate::eval::metrics::{cap_psnr, psnr};
use crate::features::{FeatureExtractor, RandomConvExtractor};
use crate::image::Image;
use crate::losses::{
    adversarial_d_var, adversarial_g_var, content_loss_var, mask_tensors, perceptual_loss_var, structural_loss_var,
    total_loss_var, ScaleVars,
};
use crate::parse_net::{images_to_tensor, ParsingModel};
use crate::rng::derive_seed;
use crate::trainer::config::{SemanticSource, TrainConfig};
use crate::trainer::schedule::KernelSchedule;
use crate::trainer::append_csv;

const GEN_SEED: u64 = 1;
const DISC_SEED: u64 = 2;
const DATA_SEED: u64 = 3;

/// Loss values of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLosses {
    pub iter: u64,
    pub entries: Vec<usize>,
    pub active_sizes: Vec<usize>,
    pub content: [f64; 2],
    pub structural: [f64; 2],
    pub perceptual: Option<f64>,
    pub adversarial: Option<f64>,
    pub discriminator: Option<f64>,
    pub d_real: Option<f64>,
    pub d_fake: Option<f64>,
    pub total: f64,
}

/// Discriminator loss and mean scores before an update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorStep {
    pub loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

/// One Adam step of the discriminator on real images and generator outputs
/// `[N, 3, S, S]`.
pub fn discriminator_step(
    disc: &mut Discriminator<f32>,
    adam: &mut Adam<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
) -> Result<DiscriminatorStep> {
    let mut g = Graph::new();
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let pr = disc.forward_graph(&mut g, r, true)?;
    let pf = disc.forward_graph(&mut g, f, true)?;
    let loss = adversarial_d_var(&mut g, pr, pf)?;
    let mean = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
    let out = DiscriminatorStep { loss: g.value(loss).item() as f64, d_real: mean(g.value(pr)), d_fake: mean(g.value(pf)) };
    let grads = g.param_grads(loss, disc.store())?;
    adam.update(disc.store_mut(), &grads);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainMeta {
    iter: u64,
    active_buckets: usize,
    cursor: EpochCursor,
    adam_g_steps: u64,
    adam_d_steps: u64,
}

/// Deblurring phase: frozen parser, Adam on generator and discriminator,
/// discriminator then generator update on every iteration.
pub struct DeblurTrainer<'a> {
    cfg: TrainConfig,
    dataset: &'a Dataset,
    parser: Option<&'a ParsingModel<f32>>,
    gen: Generator<f32>,
    disc: Discriminator<f32>,
    feat: RandomConvExtractor<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    schedule: KernelSchedule,
    batches: Batches<'a>,
    active_buckets: usize,
    iter: u64,
    val_entries: Vec<usize>,
}

impl<'a> DeblurTrainer<'a> {
    /// Fresh models initialized from the config seed.
    pub fn new(cfg: &TrainConfig, dataset: &'a Dataset, parser: Option<&'a ParsingModel<f32>>) -> Result<Self> {
        let gen = Generator::build(&cfg.generator, derive_seed(cfg.seed, GEN_SEED))?;
        let disc = Discriminator::build(&cfg.discriminator, derive_seed(cfg.seed, DISC_SEED))?;
        Self::with_models(cfg, dataset, parser, gen, disc)
    }

    pub fn with_models(
        cfg: &TrainConfig,
        dataset: &'a Dataset,
        parser: Option<&'a ParsingModel<f32>>,
        gen: Generator<f32>,
        disc: Discriminator<f32>,
    ) -> Result<Self> {
        cfg.validate()?;
        if gen.config() != &cfg.generator || disc.config() != &cfg.discriminator {
            return Err(Error::Config("model configs differ from the training config".into()));
        }
        match cfg.semantic_source {
            SemanticSource::Parser => {
                let p = parser.ok_or_else(|| Error::Config("semantic source 'parser' needs a parsing checkpoint".into()))?;
                if p.config().image_size != cfg.generator.image_size {
                    return Err(Error::Config("parser and generator image sizes differ".into()));
                }
            }
            SemanticSource::GroundTruth if !dataset.has_labels() => {
                return Err(Error::Config("semantic source 'ground_truth' needs a labelled dataset".into()));
            }
            _ => {}
        }
        if dataset.is_empty() {
            return Err(Error::Input("empty dataset".into()));
        }
        // Only sizes that the bank actually holds take part in the curriculum.
        let present: Vec<usize> = cfg.kernel_sizes.iter().copied().filter(|s| !dataset.entries_with_sizes(&[*s]).is_empty()).collect();
        if present.is_empty() {
            return Err(Error::Config(format!("no dataset entry has a kernel size in {:?}", cfg.kernel_sizes)));
        }
        let schedule = KernelSchedule::new(present, if cfg.incremental { cfg.kernel_period } else { 0 })?;
        let active_buckets = schedule.active_buckets(0);
        let pool = dataset.entries_with_sizes(&schedule.active_kernel_subset(0));
        let batches = Batches::new(
            dataset,
            pool,
            cfg.batch_size,
            cfg.augment.then(Augmentation::default),
            derive_seed(cfg.seed, DATA_SEED),
        )?;
        let feat = RandomConvExtractor::standard(cfg.feature_seed);
        if cfg.weights.lambda_p > 0.0 {
            feat.check_layers(&cfg.perceptual_layers)?;
        }
        let adam_g = cfg.optimizer.adam(gen.store(), cfg.lr_deblur);
        let adam_d = cfg.optimizer.adam(disc.store(), cfg.lr_disc());
        let val_entries = (0..dataset.len().min(cfg.val_size)).collect();
        Ok(DeblurTrainer {
            cfg: cfg.clone(),
            dataset,
            parser,
            gen,
            disc,
            feat,
            adam_g,
            adam_d,
            schedule,
            batches,
            active_buckets,
            iter: 0,
            val_entries,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.gen
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.disc
    }

    pub fn schedule(&self) -> &KernelSchedule {
        &self.schedule
    }

    /// Semantic maps for a batch according to the configured source.
    pub fn semantics(&self, blurred: &[&Image], labels: &[Option<crate::image::LabelMap>]) -> Result<Vec<SemanticMap>> {
        let s = self.cfg.generator.image_size;
        match self.cfg.semantic_source {
            SemanticSource::Parser => self.parser.expect("checked at construction").parse_batch(blurred),
            SemanticSource::GroundTruth => labels
                .iter()
                .map(|l| encode_labels(l.as_ref().ok_or_else(|| Error::Input("entry without labels".into()))?))
                .collect(),
            SemanticSource::Uniform => Ok(vec![SemanticMap::uniform(s, s); blurred.len()]),
        }
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let active = self.schedule.active_buckets(self.iter);
        if active != self.active_buckets {
            let sizes = &self.schedule.size_groups[..active];
            self.batches.set_pool(self.dataset.entries_with_sizes(sizes))?;
            self.active_buckets = active;
            log::info!("iteration {}: kernel sizes {:?} active", self.iter, sizes);
        }
        self.batches.next_batch()
    }

    /// One training iteration.
    pub fn step(&mut self) -> Result<StepLosses> {
        let batch = self.next_batch()?;
        let active_sizes = self.schedule.active_kernel_subset(self.iter);
        let blurred: Vec<&Image> = batch.blurred.iter().collect();
        let clear: Vec<&Image> = batch.clear.iter().collect();
        let sems = self.semantics(&blurred, &batch.labels)?;
        let sem_refs: Vec<&SemanticMap> = sems.iter().collect();
        let half = self.cfg.generator.image_size / 2;
        let sems_half = sems.iter().map(|m| resample_semantic(m, (half, half))).collect::<Result<Vec<_>>>()?;
        let half_refs: Vec<&SemanticMap> = sems_half.iter().collect();

        let w = self.cfg.weights;
        let mut g = Graph::new();
        let b = g.constant(images_to_tensor(&blurred)?);
        let s = g.constant(Tensor::stack_batch(&sem_refs.iter().map(|m| m.to_tensor()).collect::<Vec<_>>())?);
        let (o1, o2) = self.gen.forward_graph(&mut g, b, s, true)?;
        let gt2 = g.constant(images_to_tensor(&clear)?);
        let gt1 = g.avg_pool(gt2, 2)?;
        let m2: Vec<Var> = mask_tensors(&sem_refs).into_iter().map(|m| g.constant(m)).collect();
        let m1: Vec<Var> = mask_tensors(&half_refs).into_iter().map(|m| g.constant(m)).collect();
        let c1 = content_loss_var(&mut g, o1, gt1)?;
        let c2 = content_loss_var(&mut g, o2, gt2)?;
        let s1 = structural_loss_var(&mut g, o1, gt1, &m1)?;
        let s2 = structural_loss_var(&mut g, o2, gt2, &m2)?;
        let perceptual = if w.lambda_p > 0.0 {
            Some(perceptual_loss_var(&mut g, &self.feat, o2, gt2, &self.cfg.perceptual_layers)?)
        } else {
            None
        };

        // The discriminator sees the current fake before the generator moves,
        // and the generator's adversarial term uses the updated discriminator.
        let mut d_step = None;
        let adversarial = if w.lambda_adv > 0.0 {
            let real = g.value(gt2).clone();
            let fake = g.value(o2).clone();
            d_step = Some(discriminator_step(&mut self.disc, &mut self.adam_d, &real, &fake)?);
            let p = self.disc.forward_graph(&mut g, o2, false)?;
            Some(adversarial_g_var(&mut g, p))
        } else {
            None
        };

        let coarse = ScaleVars { content: c1, structural: s1, perceptual: None, adversarial: None };
        let fine = ScaleVars { content: c2, structural: s2, perceptual, adversarial };
        let total = total_loss_var(&mut g, &coarse, &fine, &w)?;
        let tv = g.value(total).item() as f64;
        if !tv.is_finite() {
            return Err(Error::Numeric(format!("total loss {tv} at iteration {}", self.iter)));
        }
        let grads = g.param_grads(total, self.gen.store())?;
        self.adam_g.update(self.gen.store_mut(), &grads);

        let val = |v: Var| g.value(v).item() as f64;
        let out = StepLosses {
            iter: self.iter,
            entries: batch.entries.clone(),
            active_sizes,
            content: [val(c1), val(c2)],
            structural: [val(s1), val(s2)],
            perceptual: perceptual.map(val),
            adversarial: adversarial.map(val),
            discriminator: d_step.map(|d| d.loss),
            d_real: d_step.map(|d| d.d_real),
            d_fake: d_step.map(|d| d.d_fake),
            total: tv,
        };
        self.iter += 1;
        self.schedule.current_iter = self.iter;
        Ok(out)
    }

    /// Mean capped PSNR of the clamped fine output on the validation entries.
    pub fn validation_psnr(&self) -> Result<f64> {
        let mut sum = 0.0;
        for &e in &self.val_entries {
            let blurred = self.dataset.blurred(e)?;
            let sem = self.semantics(&[&blurred], &[self.dataset.labels(e).cloned()])?;
            let (_, out) = self.gen.deblur_batch(&[&blurred], &[&sem[0]])?.remove(0);
            sum += cap_psnr(psnr(&out, self.dataset.clear(e))?);
        }
        Ok(sum / self.val_entries.len().max(1) as f64)
    }

    /// Full resumable state: models, optimizer moments, data cursor, iteration.
    pub fn state_checkpoint(&self) -> Result<Checkpoint> {
        let meta = TrainMeta {
            iter: self.iter,
            active_buckets: self.active_buckets,
            cursor: self.batches.cursor(),
            adam_g_steps: self.adam_g.steps(),
            adam_d_steps: self.adam_d.steps(),
        };
        let mut c = Checkpoint::new(CheckpointKind::Training, &self.cfg, &meta)?;
        c.push_store("gen/", self.gen.store());
        c.push_store("disc/", self.disc.store());
        push_moments(&mut c, "adam_g", self.gen.store(), &self.adam_g);
        push_moments(&mut c, "adam_d", self.disc.store(), &self.adam_d);
        Ok(c)
    }

    /// Continues a run saved with [`DeblurTrainer::state_checkpoint`].
    pub fn resume(c: &Checkpoint, dataset: &'a Dataset, parser: Option<&'a ParsingModel<f32>>) -> Result<Self> {
        if c.kind != CheckpointKind::Training {
            return Err(Error::Checkpoint(format!("expected a training checkpoint, got {}", c.kind.name())));
        }
        let cfg: TrainConfig = c.config_as()?;
        let meta: TrainMeta = c.meta_as()?;
        let mut t = Self::new(&cfg, dataset, parser)?;
        let load = |store: &mut ParamStore<f32>, prefix: &str| {
            store.load_named(&c.tensors_with_prefix(prefix)).map_err(|e| Error::Checkpoint(e.to_string()))
        };
        load(t.gen.store_mut(), "gen/")?;
        load(t.disc.store_mut(), "disc/")?;
        restore_moments(c, "adam_g", t.gen.store(), &mut t.adam_g, meta.adam_g_steps)?;
        restore_moments(c, "adam_d", t.disc.store(), &mut t.adam_d, meta.adam_d_steps)?;
        if meta.active_buckets == 0 || meta.active_buckets > t.schedule.size_groups.len() {
            return Err(Error::Checkpoint(format!("bad active bucket count {}", meta.active_buckets)));
        }
        let pool = dataset.entries_with_sizes(&t.schedule.size_groups[..meta.active_buckets]);
        t.batches.restore(pool, meta.cursor)?;
        t.active_buckets = meta.active_buckets;
        t.iter = meta.iter;
        t.schedule.current_iter = meta.iter;
        Ok(t)
    }

    /// Runs until `total_iters`, logging and checkpointing under `out_dir`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Vec<StepLosses>> {
        let mut history = Vec::new();
        let mut rows = Vec::new();
        while self.iter < self.cfg.total_iters {
            let l = self.step()?;
            if self.iter.is_multiple_of(self.cfg.log_every) || self.iter == self.cfg.total_iters {
                let vp = self.validation_psnr()?;
                log::info!("iter {}: total {:.5} val psnr {:.3}", self.iter, l.total, vp);
                rows.push(metrics_row(&l, Some(vp)));
            } else if out_dir.is_some() {
                rows.push(metrics_row(&l, None));
            }
            history.push(l);
            if let Some(dir) = out_dir {
                let save = self.cfg.checkpoint_every > 0 && self.iter.is_multiple_of(self.cfg.checkpoint_every);
                if save || self.iter == self.cfg.total_iters {
                    self.save_outputs(dir, &rows)?;
                    rows.clear();
                }
            }
        }
        Ok(history)
    }

    /// Writes the training state and both models, and appends `rows` to the
    /// metrics log.
    pub fn save_outputs(&self, dir: &Path, rows: &[Vec<String>]) -> Result<()> {
        self.state_checkpoint()?.save(&dir.join("train_state.ckpt"))?;
        generator_checkpoint(&self.gen, &serde_json::json!({ "iter": self.iter }))?.save(&dir.join("generator.ckpt"))?;
        crate::checkpoint::discriminator_checkpoint(&self.disc, &serde_json::json!({ "iter": self.iter }))?
            .save(&dir.join("discriminator.ckpt"))?;
        append_csv(&dir.join("metrics.csv"), &METRICS_HEADER, rows)
    }
}

pub const METRICS_HEADER: [&str; 13] = [
    "iter",
    "active_sizes",
    "content_coarse",
    "content_fine",
    "structural_coarse",
    "structural_fine",
    "perceptual",
    "adversarial",
    "discriminator",
    "d_real",
    "d_fake",
    "total",
    "val_psnr",
];

fn metrics_row(l: &StepLosses, val_psnr: Option<f64>) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let sizes: Vec<String> = l.active_sizes.iter().map(|s| s.to_string()).collect();
    vec![
        (l.iter + 1).to_string(),
        sizes.join(" "),
        l.content[0].to_string(),
        l.content[1].to_string(),
        l.structural[0].to_string(),
        l.structural[1].to_string(),
        opt(l.perceptual),
        opt(l.adversarial),
        opt(l.discriminator),
        opt(l.d_real),
        opt(l.d_fake),
        l.total.to_string(),
        opt(val_psnr),
    ]
}

fn push_moments(c: &mut Checkpoint, prefix: &str, store: &ParamStore<f32>, adam: &Adam<f32>) {
    let (m, v) = adam.moments();
    for ((_, name, _), (m, v)) in store.iter().zip(m.iter().zip(v)) {
        c.tensors.push((format!("{prefix}.m/{name}"), m.clone()));
        c.tensors.push((format!("{prefix}.v/{name}"), v.clone()));
    }
}

fn restore_moments(c: &Checkpoint, prefix: &str, store: &ParamStore<f32>, adam: &mut Adam<f32>, steps: u64) -> Result<()> {
    let find = |kind: &str, name: &str| {
        let key = format!("{prefix}.{kind}/{name}");
        c.tensors
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))
    };
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (_, name, _) in store.iter() {
        m.push(find("m", name)?);
        v.push(find("v", name)?);
    }
    if !adam.restore(steps, m, v) {
        return Err(Error::Checkpoint(format!("{prefix}: optimizer state does not match the model")));
    }
    Ok(())
}

/// Trains from scratch (or from `resume`) and writes outputs to `out_dir`.
pub fn train_deblurring(
    cfg: &TrainConfig,
    dataset: &Dataset,
    parser: Option<&ParsingModel<f32>>,
    resume: Option<&Path>,
    out_dir: Option<PathBuf>,
) -> Result<Vec<StepLosses>> {
    let mut t = match resume {
        Some(p) => {
            let c = Checkpoint::load(p, Some(CheckpointKind::Training))?;
            let mut t = DeblurTrainer::resume(&c, dataset, parser)?;
            // Flags may extend the run; everything else comes from the checkpoint.
            t.cfg.total_iters = cfg.total_iters;
            t
        }
        None => DeblurTrainer::new(cfg, dataset, parser)?,
    };
    t.run(out_dir.as_deref())
}

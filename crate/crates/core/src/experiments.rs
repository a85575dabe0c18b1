//! Desk-scale experiment presets shared by the acceptance harness, the
//! benches and the CLI demos.

use crate::blur::{generate_kernel_bank, DegradationConfig};
use crate::data::{Dataset, Sample};
use crate::deblur_net::{DiscriminatorConfig, GeneratorConfig};
use crate::error::Result;
use crate::eval::metrics::{cap_psnr, psnr};
use crate::losses::LossWeights;
use crate::parse_net::ParsingModelConfig;
use crate::rng::derive_seed;
use crate::synthetic::synth_faces;
use crate::trainer::{DeblurTrainer, SemanticSource, TrainConfig};

/// Labelled synthetic faces crossed with `kernels` kernels of one size.
pub fn synthetic_dataset(images: usize, image_size: usize, kernels: usize, kernel_size: usize, seed: u64) -> Result<Dataset> {
    let faces = synth_faces(images, images, image_size, derive_seed(seed, 0xFA));
    let samples = faces
        .into_iter()
        .map(|f| Sample { clear: f.image, labels: Some(f.labels), identity: Some(f.identity) })
        .collect();
    let bank = generate_kernel_bank(kernels, &[kernel_size], derive_seed(seed, 0xB4))?;
    Dataset::in_memory(samples, bank, DegradationConfig { rng_seed: derive_seed(seed, 0x5E), ..Default::default() })
}

/// Small generator, content loss only, no augmentation, one kernel size.
/// The first conv shrinks to 5x5: at 32 px an 11x11 one dominates the
/// step time.
pub fn overfit_config(image_size: usize, iters: u64, source: SemanticSource, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        lr_deblur: 1e-3,
        weights: LossWeights { lambda_s: 0.0, lambda_p: 0.0, lambda_adv: 0.0 },
        total_iters: iters,
        seed,
        kernel_sizes: vec![13],
        incremental: false,
        augment: false,
        semantic_source: source,
        log_every: iters.max(1),
        checkpoint_every: 0,
        generator: GeneratorConfig { resblocks_per_scale: 2, first_conv_kernel: 5, channels: 16, image_size, ..Default::default() },
        discriminator: DiscriminatorConfig { input_size: image_size, kernel: 3, ..Default::default() },
        parsing: ParsingModelConfig { image_size, ..Default::default() },
        ..Default::default()
    }
}

/// `(blurred, deblurred)` mean capped PSNR against the clear images over
/// every dataset entry.
pub fn training_set_psnr(trainer: &DeblurTrainer<'_>, dataset: &Dataset) -> Result<(f64, f64)> {
    let (mut before, mut after) = (0.0, 0.0);
    for e in 0..dataset.len() {
        let blurred = dataset.blurred(e)?;
        let sem = trainer.semantics(&[&blurred], &[dataset.labels(e).cloned()])?;
        let (_, out) = trainer.generator().deblur_batch(&[&blurred], &[&sem[0]])?.remove(0);
        before += cap_psnr(psnr(&blurred, dataset.clear(e))?);
        after += cap_psnr(psnr(&out, dataset.clear(e))?);
    }
    let n = dataset.len().max(1) as f64;
    Ok((before / n, after / n))
}

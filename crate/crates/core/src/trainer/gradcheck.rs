use facedeblur_tensor::gradcheck::{check_gradients, GradcheckOptions, GradcheckReport};
use facedeblur_tensor::{Graph, Init, ParamStore, Tensor, TensorError, Var};

use crate::data::{encode_labels, resample_semantic, SemanticMap};
use crate::deblur_net::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::error::{Error, Result};
use crate::features::RandomConvExtractor;
use crate::image::LabelMap;
use crate::losses::{
    adversarial_g_var, content_loss_var, mask_tensors, perceptual_loss_var, structural_loss_var, total_loss_var,
    LossWeights, ScaleVars,
};
use crate::rng;
use rand::Rng;

/// Which training objective to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradcheckLoss {
    Content,
    Structural,
    Perceptual,
    /// All four terms at the default weights.
    Total,
}

/// 8x8 inputs, one residual block, 4 channels. The first convolutions use
/// 5x5 kernels to keep the number of probed parameters small.
pub fn miniature_generator_config() -> GeneratorConfig {
    GeneratorConfig { resblocks_per_scale: 1, first_conv_kernel: 5, conv_kernel: 5, channels: 4, image_size: 8, ..Default::default() }
}

/// Six 3x3 stride-2 stages still leave one pixel of an 8x8 input.
pub fn miniature_discriminator_config() -> DiscriminatorConfig {
    DiscriminatorConfig { input_size: 8, strided_layers: 6, kernel: 3, base_channels: 4, max_channels: 8 }
}

/// Central finite differences over every generator parameter of the
/// miniature model in 64-bit arithmetic; returns the worst relative error.
/// The discriminator of the total loss is frozen: gradients reach the
/// generator through it but its own parameters are not probed.
pub fn finite_diff_gradcheck(loss: GradcheckLoss, seed: u64, eps: f64) -> Result<GradcheckReport> {
    let gen = Generator::<f64>::build(&miniature_generator_config(), seed)?;
    let disc = Discriminator::<f64>::build(&miniature_discriminator_config(), rng::derive_seed(seed, 1))?;
    let feat = RandomConvExtractor::<f64>::new(&[4, 4], rng::derive_seed(seed, 2));
    let layers = vec!["pool1".to_string(), "pool2".to_string()];

    let n = 2;
    let s = gen.config().image_size;
    let mut init = Init::new(rng::derive_seed(seed, 3));
    let blurred: Tensor<f64> = init.uniform(&[n, 3, s, s], 0.5);
    let blurred = Tensor::new(blurred.shape(), blurred.data().iter().map(|v| v + 0.5).collect())?;
    let clear: Tensor<f64> = init.uniform(&[n, 3, s, s], 0.5);
    let clear = Tensor::new(clear.shape(), clear.data().iter().map(|v| v + 0.5).collect())?;
    let mut r = rng::rng(rng::derive_seed(seed, 4));
    let sems: Vec<SemanticMap> = (0..n)
        .map(|_| encode_labels(&LabelMap::new(s, s, (0..s * s).map(|_| r.random_range(0..11u8)).collect())?))
        .collect::<Result<_>>()?;
    let refs: Vec<&SemanticMap> = sems.iter().collect();
    let halves = sems.iter().map(|m| resample_semantic(m, (s / 2, s / 2))).collect::<Result<Vec<_>>>()?;
    let half_refs: Vec<&SemanticMap> = halves.iter().collect();
    let sem_t = Tensor::stack_batch(&refs.iter().map(|m| m.to_tensor()).collect::<Vec<_>>())?;
    let m2: Vec<Tensor<f64>> = mask_tensors(&refs);
    let m1: Vec<Tensor<f64>> = mask_tensors(&half_refs);
    let weights = LossWeights::default();

    let build = |g: &mut Graph<f64>, store: &ParamStore<f64>| -> facedeblur_tensor::Result<Var> {
        let wrap = |e: Error| TensorError::Shape(e.to_string());
        let b = g.constant(blurred.clone());
        let sv = g.constant(sem_t.clone());
        let (o1, o2) = gen.forward_graph_with(g, store, b, sv, true).map_err(wrap)?;
        let gt2 = g.constant(clear.clone());
        let gt1 = g.avg_pool(gt2, 2)?;
        let masks = |g: &mut Graph<f64>, ms: &[Tensor<f64>]| ms.iter().map(|m| g.constant(m.clone())).collect::<Vec<_>>();
        match loss {
            GradcheckLoss::Content => {
                let a = content_loss_var(g, o1, gt1).map_err(wrap)?;
                let b = content_loss_var(g, o2, gt2).map_err(wrap)?;
                g.add(a, b)
            }
            GradcheckLoss::Structural => {
                let (k1, k2) = (masks(g, &m1), masks(g, &m2));
                let a = structural_loss_var(g, o1, gt1, &k1).map_err(wrap)?;
                let b = structural_loss_var(g, o2, gt2, &k2).map_err(wrap)?;
                g.add(a, b)
            }
            GradcheckLoss::Perceptual => perceptual_loss_var(g, &feat, o2, gt2, &layers).map_err(wrap),
            GradcheckLoss::Total => {
                let (k1, k2) = (masks(g, &m1), masks(g, &m2));
                let coarse = ScaleVars {
                    content: content_loss_var(g, o1, gt1).map_err(wrap)?,
                    structural: structural_loss_var(g, o1, gt1, &k1).map_err(wrap)?,
                    perceptual: None,
                    adversarial: None,
                };
                let p = disc.forward_graph(g, o2, false).map_err(wrap)?;
                let fine = ScaleVars {
                    content: content_loss_var(g, o2, gt2).map_err(wrap)?,
                    structural: structural_loss_var(g, o2, gt2, &k2).map_err(wrap)?,
                    perceptual: Some(perceptual_loss_var(g, &feat, o2, gt2, &layers).map_err(wrap)?),
                    adversarial: Some(adversarial_g_var(g, p)),
                };
                total_loss_var(g, &coarse, &fine, &weights).map_err(wrap)
            }
        }
    };
    let mut store = gen.store().clone();
    let opts = GradcheckOptions { step: eps, ..GradcheckOptions::default() };
    check_gradients(&mut store, build, opts).map_err(|e| match e {
        TensorError::NonFinite(m) => Error::Numeric(m),
        other => Error::Tensor(other),
    })
}

//! Content, structural, perceptual and adversarial losses.
//!
//! Every norm is reduced by its mean. The `*_var` builders record the loss
//! in a [`Graph`] for training; the image-level functions evaluate the same
//! builders in double precision.

use facedeblur_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{SemanticMap, STRUCTURAL_CLASSES};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::image::Image;

/// Probability clamp for the log terms.
pub const ADV_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_s: 50.0, lambda_p: 1e-5, lambda_adv: 5e-5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("lambda_s", self.lambda_s), ("lambda_p", self.lambda_p), ("lambda_adv", self.lambda_adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Soft masks of the structural classes.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralMaskSet {
    pub height: usize,
    pub width: usize,
    pub masks: Vec<(usize, Vec<f64>)>,
}

/// The probability channel of each structural class, unthresholded.
pub fn structural_masks(sem: &SemanticMap) -> StructuralMaskSet {
    StructuralMaskSet {
        height: sem.height(),
        width: sem.width(),
        masks: STRUCTURAL_CLASSES.iter().map(|&k| (k, sem.channel(k).to_vec())).collect(),
    }
}

/// Masks of a batch as `[N, 1, H, W]` tensors, one per structural class.
pub fn mask_tensors<T: Scalar>(sems: &[&SemanticMap]) -> Vec<Tensor<T>> {
    let Some(first) = sems.first() else { return Vec::new() };
    let (h, w) = (first.height(), first.width());
    STRUCTURAL_CLASSES
        .iter()
        .map(|&k| {
            let data = sems.iter().flat_map(|s| s.channel(k).iter().map(|&v| T::from_f64_lossy(v))).collect();
            Tensor::new(&[sems.len(), 1, h, w], data).expect("mask shape")
        })
        .collect()
}

pub fn content_loss_var<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// `sum_k mean(mask_k * |pred - gt|)` with masks `[N, 1, H, W]`.
pub fn structural_loss_var<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var, masks: &[Var]) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    let a = g.abs(d);
    let mut total: Option<Var> = None;
    for &m in masks {
        let w = g.mul_plane(a, m)?;
        let t = g.mean(w);
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    total.ok_or_else(|| Error::Param("no structural masks".into()))
}

/// `sum_l mean((phi_l(pred) - phi_l(gt))^2)`.
pub fn perceptual_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    feat: &dyn FeatureExtractor<T>,
    pred: Var,
    gt: Var,
    layers: &[String],
) -> Result<Var> {
    let fp = feat.features(g, pred, layers)?;
    let fg = feat.features(g, gt, layers)?;
    let mut total: Option<Var> = None;
    for (a, b) in fp.into_iter().zip(fg) {
        let d = g.sub(a, b)?;
        let s = g.square(d);
        let t = g.mean(s);
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    total.ok_or_else(|| Error::Param("no perceptual layers".into()))
}

/// Generator term `mean(-ln d_fake)` over the batch.
pub fn adversarial_g_var<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Var {
    let eps = T::from_f64_lossy(ADV_EPS);
    let l = g.ln_clamped(d_fake, eps, T::one() - eps);
    let m = g.mean(l);
    g.scale(m, -T::one())
}

/// Discriminator term `mean(-ln d_real - ln(1 - d_fake))`.
pub fn adversarial_d_var<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let eps = T::from_f64_lossy(ADV_EPS);
    let one = g.constant(Tensor::full(g.shape(d_fake), T::one()));
    let inv = g.sub(one, d_fake)?;
    let lr = g.ln_clamped(d_real, eps, T::one() - eps);
    let lf = g.ln_clamped(inv, eps, T::one() - eps);
    let s = g.add(lr, lf)?;
    let m = g.mean(s);
    Ok(g.scale(m, -T::one()))
}

/// Loss terms at one scale, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct ScaleVars {
    pub content: Var,
    pub structural: Var,
    pub perceptual: Option<Var>,
    pub adversarial: Option<Var>,
}

/// `sum_scales (Lc + ls Ls) + lp Lp + ladv Ladv`, the last two at the fine scale only.
pub fn total_loss_var<T: Scalar>(g: &mut Graph<T>, coarse: &ScaleVars, fine: &ScaleVars, w: &LossWeights) -> Result<Var> {
    if coarse.perceptual.is_some() || coarse.adversarial.is_some() {
        return Err(Error::Contract("perceptual and adversarial terms belong to the finest scale only".into()));
    }
    let mut total = None;
    let mut push = |g: &mut Graph<T>, v: Var, weight: f64| -> Result<()> {
        let t = if weight == 1.0 { v } else { g.scale(v, T::from_f64_lossy(weight)) };
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
        Ok(())
    };
    for s in [coarse, fine] {
        push(g, s.content, 1.0)?;
        push(g, s.structural, w.lambda_s)?;
    }
    if let Some(p) = fine.perceptual {
        push(g, p, w.lambda_p)?;
    }
    if let Some(a) = fine.adversarial {
        push(g, a, w.lambda_adv)?;
    }
    Ok(total.expect("at least the content terms"))
}

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Size(format!("images {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn pair(g: &mut Graph<f64>, pred: &Image, gt: &Image) -> Result<(Var, Var)> {
    same_shape(pred, gt)?;
    Ok((g.constant(pred.to_tensor()), g.constant(gt.to_tensor())))
}

pub fn content_loss(pred: &Image, gt: &Image) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = pair(&mut g, pred, gt)?;
    let l = content_loss_var(&mut g, p, t)?;
    Ok(g.value(l).item())
}

pub fn structural_loss(pred: &Image, gt: &Image, sem: &SemanticMap) -> Result<f64> {
    if sem.height() != pred.height() || sem.width() != pred.width() {
        return Err(Error::Size(format!(
            "semantic map {}x{} for image {}x{}",
            sem.height(),
            sem.width(),
            pred.height(),
            pred.width()
        )));
    }
    let mut g = Graph::new();
    let (p, t) = pair(&mut g, pred, gt)?;
    let masks: Vec<Var> = mask_tensors(&[sem]).into_iter().map(|m| g.constant(m)).collect();
    let l = structural_loss_var(&mut g, p, t, &masks)?;
    Ok(g.value(l).item())
}

pub fn perceptual_loss(pred: &Image, gt: &Image, feat: &dyn FeatureExtractor<f64>, layers: &[String]) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = pair(&mut g, pred, gt)?;
    let l = perceptual_loss_var(&mut g, feat, p, t, layers)?;
    Ok(g.value(l).item())
}

/// `(g_loss, d_loss) = (-ln d_fake, -ln d_real - ln(1 - d_fake))`, with the
/// probabilities clamped to `[eps, 1 - eps]`.
pub fn adversarial_losses(d_real: f64, d_fake: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&d_real) || !(0.0..=1.0).contains(&d_fake) {
        return Err(Error::Param(format!("probabilities must lie in [0, 1], got {d_real} and {d_fake}")));
    }
    let c = |p: f64| p.clamp(ADV_EPS, 1.0 - ADV_EPS);
    Ok((-c(d_fake).ln(), -c(d_real).ln() - (1.0 - c(d_fake)).ln()))
}

/// Scalar loss terms at one scale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScaleTerms {
    pub content: f64,
    pub structural: f64,
    pub perceptual: Option<f64>,
    pub adversarial: Option<f64>,
}

pub fn total_loss(coarse: &ScaleTerms, fine: &ScaleTerms, w: &LossWeights) -> Result<f64> {
    if coarse.perceptual.is_some() || coarse.adversarial.is_some() {
        return Err(Error::Contract("perceptual and adversarial terms belong to the finest scale only".into()));
    }
    Ok(coarse.content
        + w.lambda_s * coarse.structural
        + fine.content
        + w.lambda_s * fine.structural
        + w.lambda_p * fine.perceptual.unwrap_or(0.0)
        + w.lambda_adv * fine.adversarial.unwrap_or(0.0))
}

//! Feature extractors for the perceptual loss.

use facedeblur_tensor::{Graph, Init, ParamStore, Scalar, Var};

use crate::error::{Error, Result};
use crate::nn::ConvLayer;

/// Named feature layers computed inside a graph.
pub trait FeatureExtractor<T: Scalar>: Send + Sync {
    fn layer_names(&self) -> Vec<String>;

    /// Features of images `x [N, 3, H, W]` at `layers`, in the given order.
    fn features(&self, g: &mut Graph<T>, x: Var, layers: &[String]) -> Result<Vec<Var>>;

    fn check_layers(&self, layers: &[String]) -> Result<()> {
        let names = self.layer_names();
        if layers.is_empty() {
            return Err(Error::Param("no perceptual layers selected".into()));
        }
        match layers.iter().find(|l| !names.contains(l)) {
            Some(l) => Err(Error::Param(format!("feature layer {l:?} not exposed; available: {names:?}"))),
            None => Ok(()),
        }
    }
}

/// Raw pixels as the single layer `pixels`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn layer_names(&self) -> Vec<String> {
        vec!["pixels".into()]
    }

    fn features(&self, _g: &mut Graph<T>, x: Var, layers: &[String]) -> Result<Vec<Var>> {
        <Self as FeatureExtractor<T>>::check_layers(self, layers)?;
        Ok(layers.iter().map(|_| x).collect())
    }
}

/// Fixed-seed random convolution stack: stage `i` is a 3x3 conv, ReLU and
/// 2x2 average pooling, exposed as layer `pool{i}`.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor<T: Scalar = f32> {
    store: ParamStore<T>,
    stages: Vec<ConvLayer>,
}

impl<T: Scalar> RandomConvExtractor<T> {
    /// `widths[i]` output channels at stage `i + 1`.
    pub fn new(widths: &[usize], seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let mut cin = 3;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = ConvLayer::same(&mut store, &mut init, &format!("pool{}", i + 1), cin, w, 3);
                cin = w;
                l
            })
            .collect();
        RandomConvExtractor { store, stages }
    }

    /// Five stages, enough for `pool5` on inputs of side 32 or more.
    pub fn standard(seed: u64) -> Self {
        Self::new(&[8, 16, 16, 32, 32], seed)
    }

    pub fn cast<U: Scalar>(&self) -> RandomConvExtractor<U> {
        RandomConvExtractor { store: self.store.cast(), stages: self.stages.clone() }
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvExtractor<T> {
    fn layer_names(&self) -> Vec<String> {
        (1..=self.stages.len()).map(|i| format!("pool{i}")).collect()
    }

    fn features(&self, g: &mut Graph<T>, x: Var, layers: &[String]) -> Result<Vec<Var>> {
        self.check_layers(layers)?;
        let names = self.layer_names();
        let deepest = layers.iter().filter_map(|l| names.iter().position(|n| n == l)).max().unwrap_or(0);
        let mut outs = Vec::with_capacity(deepest + 1);
        let mut h = x;
        for stage in &self.stages[..=deepest] {
            let side = g.shape(h)[2].min(g.shape(h)[3]);
            if side < 2 || !side.is_multiple_of(2) {
                return Err(Error::Input(format!("input too small for feature layer {}", stage.name)));
            }
            let y = stage.forward(g, &self.store, h, false)?;
            let y = g.relu(y);
            h = g.avg_pool(y, 2)?;
            outs.push(h);
        }
        Ok(layers.iter().map(|l| outs[names.iter().position(|n| n == l).expect("checked")]).collect())
    }
}

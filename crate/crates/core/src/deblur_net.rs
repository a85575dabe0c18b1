//! Two-scale semantic-conditioned generator and the discriminator.

use facedeblur_tensor::{Graph, Init, ParamId, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{SemanticMap, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ConvKind, ConvLayer};
use crate::parse_net::images_to_tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_scales: usize,
    pub resblocks_per_scale: usize,
    pub first_conv_kernel: usize,
    pub conv_kernel: usize,
    pub channels: usize,
    pub scale1_in_channels: usize,
    pub scale2_in_channels: usize,
    /// Side of the finest scale; the coarse scale runs at half of it.
    pub image_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_scales: 2,
            resblocks_per_scale: 6,
            first_conv_kernel: 11,
            conv_kernel: 5,
            channels: 64,
            scale1_in_channels: 3 + NUM_CLASSES,
            scale2_in_channels: 3 + 3 + NUM_CLASSES,
            image_size: 128,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales != 2 {
            return Err(Error::Config(format!("num_scales must be 2, got {}", self.num_scales)));
        }
        if self.scale1_in_channels != 3 + NUM_CLASSES || self.scale2_in_channels != 3 + 3 + NUM_CLASSES {
            return Err(Error::Config(format!(
                "input channels must be 14 and 17, got {} and {}",
                self.scale1_in_channels, self.scale2_in_channels
            )));
        }
        if self.first_conv_kernel.is_multiple_of(2) || self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.image_size < 4 || !self.image_size.is_multiple_of(2) {
            return Err(Error::Config(format!("image_size must be even and >= 4, got {}", self.image_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    First,
    Residual,
    Output,
    Upsample,
}

/// A generator convolution with its position in the network.
#[derive(Clone, Debug, Serialize)]
pub struct LayerInfo {
    pub scale: usize,
    pub role: LayerRole,
    pub layer: ConvLayer,
}

#[derive(Clone, Debug)]
struct ScalePath {
    first: ConvLayer,
    blocks: Vec<(ConvLayer, ConvLayer)>,
    last: ConvLayer,
}

impl ScalePath {
    fn build<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &GeneratorConfig, scale: usize, cin: usize) -> Self {
        let (c, k) = (cfg.channels, cfg.conv_kernel);
        let first = ConvLayer::same(store, init, &format!("s{scale}.first"), cin, c, cfg.first_conv_kernel);
        let blocks = (0..cfg.resblocks_per_scale)
            .map(|b| {
                (
                    ConvLayer::same(store, init, &format!("s{scale}.res{b}.a"), c, c, k),
                    ConvLayer::same(store, init, &format!("s{scale}.res{b}.b"), c, c, k),
                )
            })
            .collect();
        let last = ConvLayer::same(store, init, &format!("s{scale}.out"), c, 3, k);
        ScalePath { first, blocks, last }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, tr: bool) -> Result<Var> {
        let mut h = self.first.forward(g, store, x, tr)?;
        for (a, b) in &self.blocks {
            let r = a.forward(g, store, h, tr)?;
            let r = g.relu(r);
            let r = b.forward(g, store, r, tr)?;
            h = g.add(h, r)?;
        }
        Ok(self.last.forward(g, store, h, tr)?)
    }
}

/// Per scale: first conv (no activation), residual blocks
/// (conv-ReLU-conv plus identity), output conv to RGB. The coarse output is
/// upsampled by a 4x4 stride-2 transposed conv and concatenated with the
/// blurred image and semantics at full resolution. There is no global
/// input-to-output skip.
#[derive(Clone, Debug)]
pub struct Generator<T: Scalar = f32> {
    cfg: GeneratorConfig,
    store: ParamStore<T>,
    scale1: ScalePath,
    up: ConvLayer,
    scale2: ScalePath,
}

pub fn build_generator(cfg: &GeneratorConfig, seed: u64) -> Result<Generator<f32>> {
    Generator::build(cfg, seed)
}

impl<T: Scalar> Generator<T> {
    pub fn build(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let scale1 = ScalePath::build(&mut store, &mut init, cfg, 1, cfg.scale1_in_channels);
        let up = ConvLayer::new(&mut store, &mut init, "up", 3, 3, 4, 2, 1, ConvKind::Transposed);
        let scale2 = ScalePath::build(&mut store, &mut init, cfg, 2, cfg.scale2_in_channels);
        Ok(Generator { cfg: cfg.clone(), store, scale1, up, scale2 })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            scale1: self.scale1.clone(),
            up: self.up.clone(),
            scale2: self.scale2.clone(),
        }
    }

    /// Every convolution in forward order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        let path = |scale: usize, p: &ScalePath, out: &mut Vec<LayerInfo>| {
            out.push(LayerInfo { scale, role: LayerRole::First, layer: p.first.clone() });
            for (a, b) in &p.blocks {
                out.push(LayerInfo { scale, role: LayerRole::Residual, layer: a.clone() });
                out.push(LayerInfo { scale, role: LayerRole::Residual, layer: b.clone() });
            }
            out.push(LayerInfo { scale, role: LayerRole::Output, layer: p.last.clone() });
        };
        path(1, &self.scale1, &mut out);
        out.push(LayerInfo { scale: 1, role: LayerRole::Upsample, layer: self.up.clone() });
        path(2, &self.scale2, &mut out);
        out
    }

    /// `(out_coarse, out_fine)` for blurred `[N, 3, S, S]` and semantics
    /// `[N, 11, S, S]`. Outputs are unclamped.
    pub fn forward_graph(&self, g: &mut Graph<T>, blurred: Var, sem: Var, trainable: bool) -> Result<(Var, Var)> {
        self.forward_graph_with(g, &self.store, blurred, sem, trainable)
    }

    /// [`Generator::forward_graph`] with parameters taken from `store`, which
    /// must share this generator's layout.
    pub fn forward_graph_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        blurred: Var,
        sem: Var,
        trainable: bool,
    ) -> Result<(Var, Var)> {
        let s = self.cfg.image_size;
        let (n, cb, hb, wb) = g.value(blurred).dims4()?;
        let (ns, cs, hs, ws) = g.value(sem).dims4()?;
        if cb != 3 || hb != s || wb != s {
            return Err(Error::Input(format!("blurred input must be 3x{s}x{s}, got {cb}x{hb}x{wb}")));
        }
        if ns != n || cs != NUM_CLASSES || hs != s || ws != s {
            return Err(Error::Input(format!("semantic input must be {n}x{NUM_CLASSES}x{s}x{s}, got {ns}x{cs}x{hs}x{ws}")));
        }
        // 2x2 box averaging is exact area downsampling; it keeps a
        // probability simplex a simplex.
        let b1 = g.avg_pool(blurred, 2)?;
        let s1 = g.avg_pool(sem, 2)?;
        let x1 = g.concat(&[b1, s1])?;
        if g.shape(x1)[1] != self.cfg.scale1_in_channels {
            return Err(Error::Internal("coarse input channel count".into()));
        }
        let out1 = self.scale1.forward(g, store, x1, trainable)?;
        let up = self.up.forward(g, store, out1, trainable)?;
        let x2 = g.concat(&[up, blurred, sem])?;
        if g.shape(x2)[1] != self.cfg.scale2_in_channels {
            return Err(Error::Internal("fine input channel count".into()));
        }
        let out2 = self.scale2.forward(g, store, x2, trainable)?;
        Ok((out1, out2))
    }

    /// Raw outputs for a batch, without gradients.
    pub fn forward_batch(&self, blurred: &[&Image], sems: &[&SemanticMap]) -> Result<(Tensor<T>, Tensor<T>)> {
        if blurred.len() != sems.len() {
            return Err(Error::Input(format!("{} images but {} semantic maps", blurred.len(), sems.len())));
        }
        let mut g = Graph::new();
        let b = g.constant(images_to_tensor(blurred)?);
        let parts: Vec<Tensor<T>> = sems.iter().map(|m| m.to_tensor()).collect();
        let s = g.constant(Tensor::stack_batch(&parts)?);
        let (o1, o2) = self.forward_graph(&mut g, b, s, false)?;
        Ok((g.value(o1).clone(), g.value(o2).clone()))
    }

    /// Inference on a batch: clamped `(coarse, fine)` images.
    pub fn deblur_batch(&self, blurred: &[&Image], sems: &[&SemanticMap]) -> Result<Vec<(Image, Image)>> {
        for m in sems {
            m.validate()?;
        }
        let (o1, o2) = self.forward_batch(blurred, sems)?;
        (0..blurred.len())
            .map(|i| Ok((Image::from_tensor(&o1, i)?.clamp01(), Image::from_tensor(&o2, i)?.clamp01())))
            .collect()
    }
}

/// Clamped `(out64, out128)` for one image.
pub fn generator_forward<T: Scalar>(gen: &Generator<T>, blurred: &Image, sem: &SemanticMap) -> Result<(Image, Image)> {
    Ok(gen.deblur_batch(&[blurred], &[sem])?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub strided_layers: usize,
    pub kernel: usize,
    pub base_channels: usize,
    pub max_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { input_size: 128, strided_layers: 6, kernel: 4, base_channels: 32, max_channels: 256 }
    }
}

impl DiscriminatorConfig {
    fn final_size(&self) -> usize {
        let pad = 1;
        (0..self.strided_layers).fold(self.input_size, |n, _| (n + 2 * pad).saturating_sub(self.kernel) / 2 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strided_layers != 6 {
            return Err(Error::Config(format!("the discriminator has 6 strided stages, got {}", self.strided_layers)));
        }
        if self.kernel < 2 || self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::Config("bad discriminator widths or kernel".into()));
        }
        // Every stage must keep at least one output pixel.
        let mut n = self.input_size;
        for i in 0..self.strided_layers {
            if n + 2 < self.kernel {
                return Err(Error::Config(format!("input {} too small for stage {i}", self.input_size)));
            }
            n = (n + 2 - self.kernel) / 2 + 1;
        }
        Ok(())
    }
}

/// Strided conv + ReLU stages, then a linear layer and a sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar = f32> {
    cfg: DiscriminatorConfig,
    store: ParamStore<T>,
    convs: Vec<ConvLayer>,
    head_w: ParamId,
    head_b: ParamId,
}

pub fn build_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<Discriminator<f32>> {
    Discriminator::build(cfg, seed)
}

impl<T: Scalar> Discriminator<T> {
    pub fn build(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let mut cin = 3;
        let mut convs = Vec::new();
        for i in 0..cfg.strided_layers {
            let cout = (cfg.base_channels << i).min(cfg.max_channels);
            convs.push(ConvLayer::new(&mut store, &mut init, &format!("d{i}"), cin, cout, cfg.kernel, 2, 1, ConvKind::Conv));
            cin = cout;
        }
        let f = cfg.final_size();
        let features = cin * f * f;
        let head_w = store.insert("head.weight", init.fan_in(&[1, features], features));
        let head_b = store.insert("head.bias", init.fan_in(&[1], features));
        Ok(Discriminator { cfg: cfg.clone(), store, convs, head_w, head_b })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            convs: self.convs.clone(),
            head_w: self.head_w,
            head_b: self.head_b,
        }
    }

    /// Zeroes the linear head: every input then scores exactly 0.5.
    pub fn zero_head(&mut self) {
        for id in [self.head_w, self.head_b] {
            self.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Probabilities `[N, 1]` that each image is real.
    pub fn forward_graph(&self, g: &mut Graph<T>, image: Var, trainable: bool) -> Result<Var> {
        let (n, c, h, w) = g.value(image).dims4()?;
        let s = self.cfg.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Input(format!("discriminator expects 3x{s}x{s}, got {c}x{h}x{w}")));
        }
        let mut x = image;
        for conv in &self.convs {
            let y = conv.forward(g, &self.store, x, trainable)?;
            x = g.relu(y);
        }
        let features = g.value(x).numel() / n;
        let flat = g.reshape(x, &[n, features])?;
        let hw = g.param(&self.store, self.head_w, trainable);
        let hb = g.param(&self.store, self.head_b, trainable);
        let logit = g.linear(flat, hw, Some(hb))?;
        Ok(g.sigmoid(logit))
    }

    pub fn probabilities(&self, images: &[&Image]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(images_to_tensor(images)?);
        let p = self.forward_graph(&mut g, x, false)?;
        Ok(g.value(p).data().iter().map(|v| v.to_f64_lossy()).collect())
    }
}

pub fn discriminator_forward<T: Scalar>(disc: &Discriminator<T>, image: &Image) -> Result<f64> {
    Ok(disc.probabilities(&[image])?[0])
}

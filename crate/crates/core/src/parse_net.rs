//! Encoder-decoder face parser with skip connections.

use facedeblur_tensor::{graph::softmax_channels, Graph, Init, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{SemanticMap, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::nn::{ConvKind, ConvLayer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParsingModelConfig {
    pub num_classes: usize,
    pub encoder_depth: usize,
    pub base_channels: usize,
    pub skip_connections: bool,
    pub image_size: usize,
}

impl Default for ParsingModelConfig {
    fn default() -> Self {
        ParsingModelConfig { num_classes: NUM_CLASSES, encoder_depth: 4, base_channels: 32, skip_connections: true, image_size: 128 }
    }
}

impl ParsingModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes)));
        }
        if self.encoder_depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("encoder_depth and base_channels must be >= 1".into()));
        }
        if !self.skip_connections {
            return Err(Error::Config("the parser always uses skip connections".into()));
        }
        let f = 1usize << self.encoder_depth;
        if self.image_size == 0 || !self.image_size.is_multiple_of(f) {
            return Err(Error::Config(format!("image_size {} must be a multiple of {f}", self.image_size)));
        }
        Ok(())
    }

    /// Encoder width at level `i`; level 0 is the RGB input.
    pub fn encoder_width(&self, i: usize) -> usize {
        if i == 0 {
            3
        } else {
            self.base_channels << (i - 1)
        }
    }

    /// Decoder width at level `i` (full resolution at level 0).
    pub fn decoder_width(&self, i: usize) -> usize {
        if i == 0 {
            self.base_channels
        } else {
            self.encoder_width(i)
        }
    }
}

/// Encoder: `depth` stride-2 3x3 conv + ReLU stages doubling the width.
/// Decoder, per level: 4x4 stride-2 transposed conv + ReLU, concatenation
/// with the encoder feature (or the input image) at that resolution, 3x3
/// conv + ReLU. A 1x1 conv yields the class scores.
#[derive(Clone, Debug)]
pub struct ParsingModel<T: Scalar = f32> {
    cfg: ParsingModelConfig,
    store: ParamStore<T>,
    down: Vec<ConvLayer>,
    up: Vec<ConvLayer>,
    fuse: Vec<ConvLayer>,
    head: ConvLayer,
}

pub fn build_parsing_model(cfg: &ParsingModelConfig, seed: u64) -> Result<ParsingModel<f32>> {
    ParsingModel::build(cfg, seed)
}

impl<T: Scalar> ParsingModel<T> {
    pub fn build(cfg: &ParsingModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let d = cfg.encoder_depth;
        let down = (1..=d)
            .map(|i| {
                let (cin, cout) = (cfg.encoder_width(i - 1), cfg.encoder_width(i));
                ConvLayer::new(&mut store, &mut init, &format!("enc{i}"), cin, cout, 3, 2, 1, ConvKind::Conv)
            })
            .collect();
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        for i in (1..=d).rev() {
            let (cin, cout) = (cfg.decoder_width(i), cfg.decoder_width(i - 1));
            up.push(ConvLayer::new(&mut store, &mut init, &format!("up{i}"), cin, cout, 4, 2, 1, ConvKind::Transposed));
            let skip = cfg.encoder_width(i - 1);
            fuse.push(ConvLayer::same(&mut store, &mut init, &format!("fuse{}", i - 1), cout + skip, cout, 3));
        }
        let head = ConvLayer::new(&mut store, &mut init, "head", cfg.base_channels, cfg.num_classes, 1, 1, 0, ConvKind::Conv);
        Ok(ParsingModel { cfg: cfg.clone(), store, down, up, fuse, head })
    }

    pub fn config(&self) -> &ParsingModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn layers(&self) -> Vec<&ConvLayer> {
        self.down.iter().chain(&self.up).chain(&self.fuse).chain(std::iter::once(&self.head)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParsingModel<U> {
        ParsingModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            down: self.down.clone(),
            up: self.up.clone(),
            fuse: self.fuse.clone(),
            head: self.head.clone(),
        }
    }

    /// Zeroes the 1x1 class projection, so every pixel scores all classes equally.
    pub fn zero_head(&mut self) {
        self.head.zero(&mut self.store);
    }

    /// Class scores `[N, 11, S, S]` for images `[N, 3, S, S]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        let s = self.cfg.image_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Input(format!("parser expects 3x{s}x{s} input, got {c}x{h}x{w}")));
        }
        let mut feats = vec![x];
        for layer in &self.down {
            let y = layer.forward(g, &self.store, *feats.last().expect("input"), trainable)?;
            feats.push(g.relu(y));
        }
        let mut d = feats.pop().expect("bottleneck");
        for (up, fuse) in self.up.iter().zip(&self.fuse) {
            let u = up.forward(g, &self.store, d, trainable)?;
            let u = g.relu(u);
            let cat = g.concat(&[u, feats.pop().expect("skip")])?;
            let f = fuse.forward(g, &self.store, cat, trainable)?;
            d = g.relu(f);
        }
        Ok(self.head.forward(g, &self.store, d, trainable)?)
    }

    /// Class scores for a batch of images, without recording gradients.
    pub fn logits(&self, images: &[&Image]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(images_to_tensor(images)?);
        let y = self.forward_graph(&mut g, x, false)?;
        Ok(g.value(y).clone())
    }

    pub fn parse_batch(&self, images: &[&Image]) -> Result<Vec<SemanticMap>> {
        for img in images {
            if !img.in_unit_range() {
                return Err(Error::Input("parser input must lie in [0, 1]".into()));
            }
        }
        let logits = self.logits(images)?;
        let (n, c, h, w) = logits.dims4()?;
        let probs = Tensor::new(logits.shape(), softmax_channels(&logits, n, c, h * w))?;
        (0..n).map(|i| SemanticMap::from_tensor(&probs, i)).collect()
    }

    pub fn predict_labels(&self, images: &[&Image]) -> Result<Vec<LabelMap>> {
        Ok(self.parse_batch(images)?.iter().map(SemanticMap::argmax).collect())
    }
}

/// Softmax class probabilities of `image`.
pub fn parse_face<T: Scalar>(model: &ParsingModel<T>, image: &Image) -> Result<SemanticMap> {
    Ok(model.parse_batch(&[image])?.remove(0))
}

/// Stacks images into `[N, C, H, W]`.
pub fn images_to_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let parts: Vec<Tensor<T>> = images.iter().map(|i| i.to_tensor()).collect();
    Ok(Tensor::stack_batch(&parts)?)
}

/// Pixel counts of one class pooled over many images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub true_pos: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl ClassCounts {
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap, class_id: u8) {
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p == class_id, g == class_id);
            self.true_pos += (p && g) as usize;
            self.predicted += p as usize;
            self.actual += g as usize;
        }
    }

    /// F1; both masks empty scores 1, exactly one empty scores 0.
    pub fn fscore(&self) -> f64 {
        match (self.predicted, self.actual) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ if self.true_pos == 0 => 0.0,
            _ => {
                let p = self.true_pos as f64 / self.predicted as f64;
                let r = self.true_pos as f64 / self.actual as f64;
                2.0 * p * r / (p + r)
            }
        }
    }
}

/// Per-class F1 of `pred` against `gt`. Both masks empty scores 1, exactly
/// one empty scores 0.
pub fn fscore(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Size(format!(
            "label maps {}x{} and {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if class_id as usize >= NUM_CLASSES {
        return Err(Error::Label(format!("class {class_id} out of range")));
    }
    let mut c = ClassCounts::default();
    c.add(pred, gt, class_id);
    Ok(c.fscore())
}

/// Fraction of pixels where `pred` equals `gt`.
pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let hits = pred.data().iter().zip(gt.data()).filter(|(a, b)| a == b).count();
    hits as f64 / gt.data().len() as f64
}

use facedeblur_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::geom::Affine;
use crate::image::{area_resample_plane, sample_plane, LabelMap};

pub const NUM_CLASSES: usize = 11;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "face skin",
    "left eyebrow",
    "right eyebrow",
    "left eye",
    "right eye",
    "nose",
    "upper lip",
    "lower lip",
    "teeth",
    "hair",
];

/// Eyebrows, eyes, nose, lips and teeth.
pub const STRUCTURAL_CLASSES: [usize; 8] = [2, 3, 4, 5, 6, 7, 8, 9];

/// Per-pixel probabilities over the face classes, planar `[11, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    probs: Vec<f64>,
}

impl SemanticMap {
    /// Validates the simplex property within `1e-5`.
    pub fn new(height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != NUM_CLASSES * height * width {
            return Err(Error::Size(format!("{height}x{width} semantic map from {} values", probs.len())));
        }
        let m = SemanticMap { height, width, probs };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        SemanticMap { height, width, probs: vec![1.0 / NUM_CLASSES as f64; NUM_CLASSES * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.probs[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, y: usize, x: usize) -> f64 {
        self.probs[(k * self.height + y) * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..NUM_CLASSES {
                let p = self.probs[k * n + i];
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::Input(format!("probability {p} at pixel {i}")));
                }
                s += p;
            }
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::Input(format!("probabilities at pixel {i} sum to {s}")));
            }
        }
        Ok(())
    }

    /// Most likely class per pixel; ties go to the lower class index.
    pub fn argmax(&self) -> LabelMap {
        let n = self.height * self.width;
        let data = (0..n)
            .map(|i| {
                let mut best = 0;
                for k in 1..NUM_CLASSES {
                    if self.probs[k * n + i] > self.probs[best * n + i] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap::new(self.height, self.width, data).expect("label map size")
    }

    /// Reorders channels: output channel `k` is input channel `perm[k]`.
    pub fn permute(&self, perm: &[usize; NUM_CLASSES]) -> SemanticMap {
        let mut probs = Vec::with_capacity(self.probs.len());
        for &src in perm {
            probs.extend_from_slice(self.channel(src));
        }
        SemanticMap { probs, ..*self }
    }

    /// Bilinear warp per channel, renormalized.
    pub fn warp(&self, inverse: &Affine, out_h: usize, out_w: usize) -> SemanticMap {
        let mut probs = Vec::with_capacity(NUM_CLASSES * out_h * out_w);
        for k in 0..NUM_CLASSES {
            let plane = self.channel(k);
            for y in 0..out_h {
                for x in 0..out_w {
                    let (sx, sy) = inverse.apply(x as f64, y as f64);
                    probs.push(sample_plane(plane, self.height, self.width, sy, sx));
                }
            }
        }
        renormalize(&mut probs, out_h * out_w);
        SemanticMap { height: out_h, width: out_w, probs }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, NUM_CLASSES, self.height, self.width],
            self.probs.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("semantic tensor shape")
    }

    /// Sample `n` of an `[N, 11, H, W]` probability tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<SemanticMap> {
        let (_, c, h, w) = t.dims4()?;
        if c != NUM_CLASSES {
            return Err(Error::Input(format!("semantic tensor has {c} channels, expected {NUM_CLASSES}")));
        }
        let len = c * h * w;
        let probs = t.data()[n * len..(n + 1) * len].iter().map(|v| v.to_f64_lossy()).collect();
        SemanticMap::new(h, w, probs)
    }
}

fn renormalize(probs: &mut [f64], n: usize) {
    for i in 0..n {
        let s: f64 = (0..NUM_CLASSES).map(|k| probs[k * n + i]).sum();
        for k in 0..NUM_CLASSES {
            probs[k * n + i] /= s;
        }
    }
}

/// One-hot encoding of a label image.
pub fn encode_labels(labels: &LabelMap) -> Result<SemanticMap> {
    let (h, w) = (labels.height(), labels.width());
    let n = h * w;
    let mut probs = vec![0.0; NUM_CLASSES * n];
    for (i, &l) in labels.data().iter().enumerate() {
        if l as usize >= NUM_CLASSES {
            return Err(Error::Label(format!("class index {l} at pixel {i} is out of range 0..{}", NUM_CLASSES - 1)));
        }
        probs[l as usize * n + i] = 1.0;
    }
    Ok(SemanticMap { height: h, width: w, probs })
}

/// Area downsampling per channel followed by per-pixel renormalization.
pub fn resample_semantic(map: &SemanticMap, out_hw: (usize, usize)) -> Result<SemanticMap> {
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 {
        return Err(Error::Param(format!("resample to {oh}x{ow}")));
    }
    let mut probs = Vec::with_capacity(NUM_CLASSES * oh * ow);
    for k in 0..NUM_CLASSES {
        probs.extend(area_resample_plane(map.channel(k), map.height, map.width, oh, ow));
    }
    renormalize(&mut probs, oh * ow);
    Ok(SemanticMap { height: oh, width: ow, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn background_only() {
        let m = encode_labels(&LabelMap::filled(4, 5, 0)).unwrap();
        assert!(m.channel(0).iter().all(|&v| v == 1.0));
        assert!((1..NUM_CLASSES).all(|k| m.channel(k).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_nose_pixel() {
        let mut l = LabelMap::filled(3, 3, 1);
        l.set(1, 2, 6);
        let m = encode_labels(&l).unwrap();
        assert_eq!(m.get(6, 1, 2), 1.0);
        assert_eq!(m.get(1, 1, 2), 0.0);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let l = LabelMap::new(1, 2, vec![3, 11]).unwrap();
        assert!(matches!(encode_labels(&l), Err(Error::Label(_))));
    }

    #[test]
    fn block_average() {
        let l = LabelMap::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let m = resample_semantic(&encode_labels(&l).unwrap(), (1, 1)).unwrap();
        assert_eq!(m.get(1, 0, 0), 0.5);
        assert_eq!(m.get(2, 0, 0), 0.5);
        let flat = encode_labels(&LabelMap::filled(8, 8, 10)).unwrap();
        assert_eq!(resample_semantic(&flat, (4, 4)).unwrap(), encode_labels(&LabelMap::filled(4, 4, 10)).unwrap());
    }

    #[test]
    fn uniform_is_valid() {
        SemanticMap::uniform(3, 2).validate().unwrap();
        assert!(SemanticMap::new(1, 1, vec![0.5; 11]).is_err());
    }

    proptest! {
        #[test]
        fn argmax_inverts_encode(data in proptest::collection::vec(0u8..11, 30)) {
            let l = LabelMap::new(5, 6, data).unwrap();
            prop_assert_eq!(encode_labels(&l).unwrap().argmax(), l);
        }

        #[test]
        fn resample_keeps_simplex(data in proptest::collection::vec(0u8..11, 63), oh in 1usize..8, ow in 1usize..10) {
            let m = encode_labels(&LabelMap::new(7, 9, data).unwrap()).unwrap();
            let r = resample_semantic(&m, (oh, ow)).unwrap();
            for i in 0..oh * ow {
                let s: f64 = (0..NUM_CLASSES).map(|k| r.channel(k)[i]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn warp_keeps_simplex(data in proptest::collection::vec(0u8..11, 64), angle in -0.2f64..0.2, shift in -3.0f64..3.0) {
            let m = encode_labels(&LabelMap::new(8, 8, data).unwrap()).unwrap();
            let t = Affine::similarity_about(3.5, 3.5, angle, 1.03, shift, -shift);
            m.warp(&t, 8, 8).validate().unwrap();
        }
    }
}

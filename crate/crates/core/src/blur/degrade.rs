use facedeblur_tensor::Execution;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blur::kernel::BlurKernel;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub noise_sigma: f64,
    #[serde(default)]
    pub boundary: Boundary,
    pub rng_seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig { noise_sigma: 0.01, boundary: Boundary::Replicate, rng_seed: 0 }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Param(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Per-channel correlation with `kernel` under the given boundary, without
/// clipping. Linear in the image.
///
/// Each output is accumulated as `x_c + sum_i w_i (x_i - x_c)` around the
/// center sample `x_c`. This equals `sum_i w_i x_i` for a normalized kernel,
/// and it reproduces constant regions and the delta kernel exactly.
pub fn blur_unclipped(image: &Image, kernel: &BlurKernel, boundary: Boundary, exec: Execution) -> Result<Image> {
    let Boundary::Replicate = boundary;
    let (c, h, w) = image.dims();
    let k = kernel.size();
    if h < k || w < k {
        return Err(Error::Size(format!("{k}x{k} kernel is larger than the {h}x{w} image")));
    }
    let r = (k / 2) as isize;
    let taps: Vec<(isize, isize, f64)> = kernel
        .taps()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != 0.0)
        .map(|(i, &t)| ((i / k) as isize - r, (i % k) as isize - r, t))
        .collect();
    // Replicate-padded planes make the inner loop branch free.
    let pw = w + 2 * r as usize;
    let ph = h + 2 * r as usize;
    let padded: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            let plane = image.plane(ch);
            let mut p = Vec::with_capacity(ph * pw);
            for py in 0..ph {
                let sy = (py as isize - r).clamp(0, h as isize - 1) as usize;
                for px in 0..pw {
                    let sx = (px as isize - r).clamp(0, w as isize - 1) as usize;
                    p.push(plane[sy * w + sx]);
                }
            }
            p
        })
        .collect();
    let rows = exec.map_range(c * h, |row| {
        let (ch, y) = (row / h, row % h);
        let p = &padded[ch];
        let mut out = vec![0.0; w];
        for (x, o) in out.iter_mut().enumerate() {
            let cy = y as isize + r;
            let cx = x as isize + r;
            let center = p[cy as usize * pw + cx as usize];
            let mut acc = 0.0;
            for &(dy, dx, t) in &taps {
                acc += t * (p[(cy + dy) as usize * pw + (cx + dx) as usize] - center);
            }
            *o = center + acc;
        }
        out
    });
    Image::new(c, h, w, rows.concat())
}

/// Blurs and clips to `[0, 1]`.
pub fn apply_blur(image: &Image, kernel: &BlurKernel, boundary: Boundary) -> Result<Image> {
    Ok(blur_unclipped(image, kernel, boundary, Execution::default())?.clamp01())
}

/// Blur, then i.i.d. Gaussian noise drawn in planar order from `cfg.rng_seed`,
/// then clipping to `[0, 1]`.
pub fn degrade(image: &Image, kernel: &BlurKernel, cfg: &DegradationConfig) -> Result<Image> {
    cfg.validate()?;
    let mut out = blur_unclipped(image, kernel, cfg.boundary, Execution::default())?;
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Param(e.to_string()))?;
        let mut r = rng::rng(cfg.rng_seed);
        out.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut r));
    }
    Ok(out.clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
        let mut r = rng::rng(seed);
        Image::from_fn(c, h, w, |_, _, _| r.random::<f64>())
    }

    fn random_kernel(seed: u64, k: usize) -> BlurKernel {
        let mut r = rng::rng(seed);
        BlurKernel::new(k, (0..k * k).map(|_| r.random::<f64>()).collect(), seed).unwrap()
    }

    /// Literal double loop with clamped indices.
    fn direct(img: &Image, k: &BlurKernel) -> Image {
        let (c, h, w) = img.dims();
        let r = (k.size() / 2) as isize;
        Image::from_fn(c, h, w, |ch, y, x| {
            let mut s = 0.0;
            for i in 0..k.size() {
                for j in 0..k.size() {
                    let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    s += k.tap(i, j) * img.get(ch, sy, sx);
                }
            }
            s
        })
    }

    #[test]
    fn matches_direct_loop() {
        for case in 0..10 {
            let img = random_image(case, 3, 16, 16);
            let k = random_kernel(100 + case, 5);
            let got = blur_unclipped(&img, &k, Boundary::Replicate, Execution::Sequential).unwrap();
            let want = direct(&img, &k);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn correlation_orientation() {
        // A kernel with all mass at the right of center pulls from x+1.
        let mut taps = vec![0.0; 9];
        taps[5] = 1.0;
        let k = BlurKernel::new(3, taps, 0).unwrap();
        let img = Image::from_fn(1, 3, 4, |_, _, x| x as f64 / 4.0);
        let out = blur_unclipped(&img, &k, Boundary::Replicate, Execution::Sequential).unwrap();
        assert_eq!(out.get(0, 1, 1), img.get(0, 1, 2));
        assert_eq!(out.get(0, 1, 3), img.get(0, 1, 3));
    }

    #[test]
    fn constant_and_delta_are_exact() {
        let k = random_kernel(3, 13).round_to_f32();
        let flat = Image::filled(3, 20, 20, 0.37);
        assert_eq!(apply_blur(&flat, &k, Boundary::Replicate).unwrap(), flat);
        let img = random_image(5, 3, 20, 20);
        assert_eq!(apply_blur(&img, &BlurKernel::delta(13), Boundary::Replicate).unwrap(), img);
    }

    #[test]
    fn strategies_agree_bitwise() {
        let img = random_image(9, 3, 40, 33);
        let k = random_kernel(2, 9);
        let a = blur_unclipped(&img, &k, Boundary::Replicate, Execution::Sequential).unwrap();
        let b = blur_unclipped(&img, &k, Boundary::Replicate, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let img = random_image(0, 3, 10, 30);
        assert!(matches!(apply_blur(&img, &random_kernel(0, 13), Boundary::Replicate), Err(Error::Size(_))));
    }

    #[test]
    fn degrade_noise_statistics_and_determinism() {
        let img = Image::filled(3, 128, 128, 0.5);
        let k = random_kernel(4, 13);
        let cfg = DegradationConfig { noise_sigma: 0.01, rng_seed: 7, ..Default::default() };
        let a = degrade(&img, &k, &cfg).unwrap();
        let b = degrade(&img, &k, &cfg).unwrap();
        assert_eq!(a, b);
        let mean = a.data().iter().sum::<f64>() / a.data().len() as f64;
        assert!((mean - 0.5).abs() <= 3.0 * 0.01 / 128.0, "{mean}");
        let clean = DegradationConfig { noise_sigma: 0.0, ..cfg };
        let photo = random_image(1, 3, 16, 16);
        assert_eq!(degrade(&photo, &BlurKernel::delta(13), &clean).unwrap(), photo);
        let neg = DegradationConfig { noise_sigma: -1.0, ..cfg };
        assert!(degrade(&photo, &k, &neg).is_err());
    }
}

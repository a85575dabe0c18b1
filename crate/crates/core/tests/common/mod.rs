//! Scalar-loop oracles shared by the integration tests and the acceptance
//! harness. Each one is written from the definition, without calling the
//! library code it checks.
#![allow(dead_code)]

use facedeblur::blur::BlurKernel;
use facedeblur::data::SemanticMap;
use facedeblur::image::Image;
use facedeblur::rng;
use rand::Rng;

pub const STRUCTURAL: [usize; 8] = [2, 3, 4, 5, 6, 7, 8, 9];

pub fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
    let mut r = rng::rng(seed);
    Image::from_fn(c, h, w, |_, _, _| r.random::<f64>())
}

pub fn random_kernel(seed: u64, k: usize) -> BlurKernel {
    let mut r = rng::rng(seed);
    BlurKernel::new(k, (0..k * k).map(|_| r.random::<f64>()).collect(), seed).unwrap()
}

/// Random per-pixel distribution over the 11 classes.
pub fn random_semantics(seed: u64, h: usize, w: usize) -> SemanticMap {
    let mut r = rng::rng(seed);
    let mut probs = vec![0.0; 11 * h * w];
    for p in 0..h * w {
        let raw: Vec<f64> = (0..11).map(|_| r.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        for (k, v) in raw.iter().enumerate() {
            probs[k * h * w + p] = v / s;
        }
    }
    SemanticMap::new(h, w, probs).unwrap()
}

/// Correlation with replicated borders, one tap at a time.
pub fn direct_blur(img: &Image, k: &BlurKernel) -> Image {
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

pub fn oracle_content(p: &Image, g: &Image) -> f64 {
    let (c, h, w) = p.dims();
    let mut s = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                s += (p.get(ch, y, x) - g.get(ch, y, x)).abs();
            }
        }
    }
    s / (c * h * w) as f64
}

/// Sum over the eight component masks of the mask-weighted mean L1 error.
pub fn oracle_structural(p: &Image, g: &Image, sem: &SemanticMap) -> f64 {
    let (c, h, w) = p.dims();
    let mut total = 0.0;
    for &k in &STRUCTURAL {
        let mut s = 0.0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    s += sem.get(k, y, x) * (p.get(ch, y, x) - g.get(ch, y, x)).abs();
                }
            }
        }
        total += s / (c * h * w) as f64;
    }
    total
}

/// Squared feature distance for raw pixels taken as the feature map.
pub fn oracle_pixel_perceptual(p: &Image, g: &Image) -> f64 {
    let n = p.data().len() as f64;
    p.data().iter().zip(g.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

pub fn oracle_adversarial(d_real: f64, d_fake: f64) -> (f64, f64) {
    let eps = 1e-7;
    let clamp = |v: f64| v.max(eps).min(1.0 - eps);
    (-(clamp(d_fake).ln()), -(clamp(d_real).ln()) - (1.0 - clamp(d_fake)).ln())
}

fn luma(img: &Image, y: usize, x: usize) -> f64 {
    0.299 * img.get(0, y, x) + 0.587 * img.get(1, y, x) + 0.114 * img.get(2, y, x)
}

/// Mean SSIM over every 11x11 window fully inside the image, with a 2D
/// Gaussian weight evaluated directly for each window.
pub fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    let (_, h, w) = a.dims();
    let win = 11usize;
    let sigma = 1.5f64;
    let mut weights = vec![0.0; win * win];
    for i in 0..win {
        for j in 0..win {
            let dy = i as f64 - 5.0;
            let dx = j as f64 - 5.0;
            weights[i * win + j] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= wsum);
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let wt = weights[i * win + j];
                    mx += wt * luma(a, y0 + i, x0 + j);
                    my += wt * luma(b, y0 + i, x0 + j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let wt = weights[i * win + j];
                    let dx = luma(a, y0 + i, x0 + j) - mx;
                    let dy = luma(b, y0 + i, x0 + j) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Top-k accuracy by exhaustively ranking every gallery entry with a full
/// sort keyed on (distance, gallery index).
pub fn oracle_topk(probes: &[(Vec<f64>, String)], gallery: &[(Vec<f64>, String)], k: usize) -> f64 {
    let mut hits = 0usize;
    for (pe, pid) in probes {
        let mut ranked: Vec<(f64, usize)> = gallery
            .iter()
            .enumerate()
            .map(|(i, (ge, _))| (pe.iter().zip(ge).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if ranked.iter().take(k).any(|&(_, i)| &gallery[i].1 == pid) {
            hits += 1;
        }
    }
    hits as f64 / probes.len() as f64
}

/// Independent reading of the curriculum: sizes are sorted ascending and the
/// bucket with rank `b` is sampled from iteration `b * period` onwards.
pub fn oracle_schedule(sizes: &[usize], period: u64, iter: u64) -> Vec<usize> {
    let mut s = sizes.to_vec();
    s.sort();
    s.dedup();
    s.iter().enumerate().filter(|(b, _)| period == 0 || *b as u64 * period <= iter).map(|(_, &v)| v).collect()
}

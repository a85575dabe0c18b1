use crate::blur::trajectory::CameraTrajectory;
use crate::error::{Error, Result};
use crate::image::Image;

/// Normalized, non-negative `size x size` point-spread function, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    taps: Vec<f64>,
    source_seed: u64,
}

impl BlurKernel {
    /// Normalizes `weights` to unit sum.
    pub fn new(size: usize, weights: Vec<f64>, source_seed: u64) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::Param(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::Size(format!("{size}x{size} kernel from {} taps", weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Param("kernel taps must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Param("kernel has no mass".into()));
        }
        let taps = weights.into_iter().map(|w| w / sum).collect();
        Ok(BlurKernel { size, taps, source_seed })
    }

    /// Wraps taps that are already normalized, as read from a bank file.
    pub(crate) fn from_normalized(size: usize, taps: Vec<f64>, source_seed: u64) -> Result<Self> {
        let k = BlurKernel { size, taps, source_seed };
        k.validate()?;
        Ok(k)
    }

    pub fn delta(size: usize) -> Self {
        let mut taps = vec![0.0; size * size];
        taps[size * size / 2] = 1.0;
        BlurKernel { size, taps, source_seed: 0 }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, y: usize, x: usize) -> f64 {
        self.taps[y * self.size + x]
    }

    pub fn source_seed(&self) -> u64 {
        self.source_seed
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.is_multiple_of(2) || self.taps.len() != self.size * self.size {
            return Err(Error::Size(format!("bad kernel geometry {} / {}", self.size, self.taps.len())));
        }
        if self.taps.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Param("negative or non-finite tap".into()));
        }
        let s = self.sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Param(format!("kernel sums to {s}")));
        }
        Ok(())
    }

    /// Rounds taps to multiples of 2^-24 summing to exactly one, by largest
    /// remainder. Such taps are exact in single precision (the on-disk
    /// representation) and any f64 sum of them is exact.
    pub fn round_to_f32(mut self) -> Self {
        const UNIT: f64 = (1u64 << 24) as f64;
        let sum = self.sum();
        let scaled: Vec<f64> = self.taps.iter().map(|t| t / sum * UNIT).collect();
        let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
        let deficit = (1u64 << 24) - counts.iter().sum::<u64>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().take(deficit as usize) {
            counts[i] += 1;
        }
        self.taps = counts.iter().map(|&c| c as f64 / UNIT).collect();
        self
    }

    /// Grayscale rendering with the largest tap at full intensity.
    pub fn to_image(&self) -> Image {
        let max = self.taps.iter().cloned().fold(0.0, f64::max);
        Image::from_fn(1, self.size, self.size, |_, y, x| self.tap(y, x) / max)
    }
}

/// Bilinear splat of every trajectory point onto a `size x size` grid centered
/// on the origin. Trajectories wider than the grid are shrunk isotropically.
pub fn rasterize_kernel(traj: &CameraTrajectory, size: usize) -> Result<BlurKernel> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::Param(format!("kernel size must be odd and >= 3, got {size}")));
    }
    let half = ((size - 1) / 2) as f64;
    let extent = traj.extent();
    let factor = if extent > half { half / extent } else { 1.0 };
    let last = (size - 1) as f64;
    let mut acc = vec![0.0; size * size];
    for &(px, py) in traj.positions() {
        let x = (px * factor + half).clamp(0.0, last);
        let y = (py * factor + half).clamp(0.0, last);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
            for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                let w = wy * wx;
                if w > 0.0 && yy < size && xx < size {
                    acc[yy * size + xx] += w;
                }
            }
        }
    }
    if acc.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Internal("trajectory left no mass on the kernel grid".into()));
    }
    BlurKernel::new(size, acc, traj.rng_seed())
}

//! Planar floating point images and integer label maps.

use std::path::Path;

use facedeblur_tensor::{Scalar, Tensor};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geom::Affine;

/// Planar `[channels, height, width]` image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Size(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rec. 601 luma of an RGB image; single-channel images are returned as-is.
    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let data = (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect();
        Image { channels: 1, height: self.height, width: self.width, data }
    }

    /// Bilinear sample of channel `c` at continuous pixel coordinates, with
    /// replicated borders.
    pub fn sample_bilinear(&self, c: usize, y: f64, x: f64) -> f64 {
        sample_plane(self.plane(c), self.height, self.width, y, x)
    }

    /// Area (box-filter) resampling to `out_h x out_w`.
    pub fn resize_area(&self, out_h: usize, out_w: usize) -> Result<Image> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Param(format!("resize to {out_h}x{out_w}")));
        }
        let mut data = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            data.extend(area_resample_plane(self.plane(c), self.height, self.width, out_h, out_w));
        }
        Ok(Image { channels: self.channels, height: out_h, width: out_w, data })
    }

    /// Warps with `out(p) = self(inverse(p))`, bilinear with replicated borders.
    pub fn warp(&self, inverse: &Affine, out_h: usize, out_w: usize) -> Image {
        let mut data = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..out_h {
                for x in 0..out_w {
                    let (sx, sy) = inverse.apply(x as f64, y as f64);
                    data.push(sample_plane(plane, self.height, self.width, sy, sx));
                }
            }
        }
        Image { channels: self.channels, height: out_h, width: out_w, data }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("image tensor shape")
    }

    /// Sample `n` of an NCHW tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Image> {
        let (_, c, h, w) = t.dims4()?;
        let len = c * h * w;
        let data = t.data()[n * len..(n + 1) * len].iter().map(|v| v.to_f64_lossy()).collect();
        Image::new(c, h, w, data)
    }

    /// Quantizes to 8 bits per channel, as stored in PNG files.
    pub fn quantize8(&self) -> Image {
        let data = self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect();
        Image { data, ..*self }
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Ok(Image::from_fn(3, h, w, |c, y, x| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => ImageBuffer::<Luma<u8>, _>::from_fn(w, h, |x, y| Luma([to_u8(self.get(0, y as usize, x as usize))]))
                .save(path),
            3 => RgbImage::from_fn(w, h, |x, y| {
                let p = |c| to_u8(self.get(c, y as usize, x as usize));
                Rgb([p(0), p(1), p(2)])
            })
            .save(path),
            c => return Err(Error::Input(format!("cannot save {c}-channel image as PNG"))),
        };
        res.map_err(|source| Error::Image { path: path.into(), source })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub(crate) fn sample_plane(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = if fx == 0.0 { plane[y0 * w + x0] } else { plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx };
    if fy == 0.0 {
        return top;
    }
    let bot = if fx == 0.0 { plane[y1 * w + x0] } else { plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx };
    top * (1.0 - fy) + bot * fy
}

/// Overlap-weighted box resampling of one plane.
pub(crate) fn area_resample_plane(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let ys = area_weights(h, out_h);
    let xs = area_weights(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for wy in &ys {
        for wx in &xs {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for &(iy, fy) in wy {
                for &(ix, fx) in wx {
                    acc += plane[iy * w + ix] * fy * fx;
                    norm += fy * fx;
                }
            }
            out.push(acc / norm);
        }
    }
    out
}

/// For each output cell, the input cells it covers and the overlap lengths.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut cells = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((i, overlap));
                }
                i += 1;
            }
            cells
        })
        .collect()
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Size(format!("{height}x{width} label map from {} values", data.len())));
        }
        Ok(LabelMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        LabelMap { height, width, data: vec![class; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Nearest-neighbour warp with replicated borders.
    pub fn warp(&self, inverse: &Affine, out_h: usize, out_w: usize) -> LabelMap {
        let mut data = Vec::with_capacity(out_h * out_w);
        for y in 0..out_h {
            for x in 0..out_w {
                let (sx, sy) = inverse.apply(x as f64, y as f64);
                let sy = sy.round().clamp(0.0, (self.height - 1) as f64) as usize;
                let sx = sx.round().clamp(0.0, (self.width - 1) as f64) as usize;
                data.push(self.data[sy * self.width + sx]);
            }
        }
        LabelMap { height: out_h, width: out_w, data }
    }

    pub fn load_png(path: &Path) -> Result<LabelMap> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
        let g = img.to_luma8();
        Ok(LabelMap { height: g.height() as usize, width: g.width() as usize, data: g.into_raw() })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("label buffer size")
            .save(path)
            .map_err(|source| Error::Image { path: path.into(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_resize_halves_by_block_average() {
        let img = Image::new(1, 2, 4, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let half = img.resize_area(1, 2).unwrap();
        assert_eq!(half.data(), &[2.5, 4.5]);
    }

    #[test]
    fn area_resize_fractional_preserves_mean() {
        let img = Image::from_fn(1, 7, 5, |_, y, x| (y * 5 + x) as f64 / 34.0);
        let small = img.resize_area(3, 2).unwrap();
        let mean_in: f64 = img.data().iter().sum::<f64>() / 35.0;
        let mean_out: f64 = small.data().iter().sum::<f64>() / 6.0;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn bilinear_hits_grid_values_exactly() {
        let img = Image::from_fn(1, 3, 3, |_, y, x| (y * 3 + x) as f64);
        assert_eq!(img.sample_bilinear(0, 1.0, 2.0), 5.0);
        assert!((img.sample_bilinear(0, 0.5, 0.5) - 2.0).abs() < 1e-12);
        assert_eq!(img.sample_bilinear(0, -4.0, 9.0), 2.0);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(3, 4, 5, |c, y, x| ((c + y * 2 + x) % 7) as f64 / 6.3);
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back, img.quantize8());
    }
}

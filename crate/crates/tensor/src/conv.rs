//! im2col convolution kernels for a single sample.
//!
//! Weights use the `[out, in, k, k]` layout for ordinary convolutions and
//! `[in, out, k, k]` for transposed convolutions. Columns are built for a
//! band of output rows at a time so that the scratch buffer stays bounded.

use crate::scalar::{gemm, MatMut, MatRef};
use crate::Scalar;

/// Maximum number of elements in one column buffer.
const TILE_ELEMS: usize = 1 << 20;

/// Geometry of a strided, zero-padded square-kernel correlation mapping an
/// image `[channels, height, width]` to an output grid `[out_h, out_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Ordinary convolution output size.
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel {
            return None;
        }
        Some(ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Geometry for a transposed convolution producing `channels` maps from
    /// an `in_h x in_w` input; the transposed output is the "image" side.
    pub fn transposed(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if in_h == 0 || in_w == 0 || stride == 0 {
            return None;
        }
        let height = ((in_h - 1) * stride + kernel).checked_sub(2 * pad)?;
        let width = ((in_w - 1) * stride + kernel).checked_sub(2 * pad)?;
        let g = ConvGeom::new(channels, height, width, kernel, stride, pad)?;
        (g.out_h == in_h && g.out_w == in_w).then_some(g)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn tile_rows(&self) -> usize {
        (TILE_ELEMS / (self.col_rows() * self.out_w).max(1)).clamp(1, self.out_h)
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kx`.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        // ix = ox*stride + kx - pad must satisfy 0 <= ix < width.
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        let hi_num = (self.width + self.pad).saturating_sub(kx); // ix < width  <=>  ox*stride < width + pad - kx
        let hi = hi_num.div_ceil(self.stride).min(self.out_w);
        (lo.min(hi), hi)
    }
}

/// Fills `cols` (`col_rows x (oy1-oy0)*out_w`) from `img`.
pub fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], oy0: usize, oy1: usize, cols: &mut [T]) {
    let ow = g.out_w;
    let span = (oy1 - oy0) * ow;
    debug_assert!(cols.len() >= g.col_rows() * span);
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * span..(row + 1) * span];
                let (lo, hi) = g.ox_range(kx);
                for oy in oy0..oy1 {
                    let out = &mut dst[(oy - oy0) * ow..(oy - oy0 + 1) * ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.pad;
                        out[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `img`; the adjoint of [`im2col`].
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], oy0: usize, oy1: usize, img: &mut [T]) {
    let ow = g.out_w;
    let span = (oy1 - oy0) * ow;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * span..(row + 1) * span];
                let (lo, hi) = g.ox_range(kx);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        continue;
                    }
                    let inp = &src[(oy - oy0) * ow..(oy - oy0 + 1) * ow];
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.pad;
                        for (d, s) in dst[ix0..ix0 + (hi - lo)].iter_mut().zip(&inp[lo..hi]) {
                            *d += *s;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox * g.stride + kx - g.pad] += inp[ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

/// `y[co, oh*ow] = w[co, K] * im2col(x) + b`.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, out_ch: usize, y: &mut [T]) {
    let kdim = g.col_rows();
    let p = g.out_pixels();
    if is_pointwise(g) {
        gemm(
            T::one(),
            MatRef::row_major(w, out_ch, kdim, kdim),
            MatRef::row_major(x, kdim, p, p),
            T::zero(),
            MatMut::row_major(y, out_ch, p, p),
        );
    } else {
        let tr = g.tile_rows();
        let mut cols = vec![T::zero(); kdim * tr * g.out_w];
        let mut oy0 = 0;
        while oy0 < g.out_h {
            let oy1 = (oy0 + tr).min(g.out_h);
            let span = (oy1 - oy0) * g.out_w;
            im2col(g, x, oy0, oy1, &mut cols);
            gemm(
                T::one(),
                MatRef::row_major(w, out_ch, kdim, kdim),
                MatRef::row_major(&cols[..kdim * span], kdim, span, span),
                T::zero(),
                MatMut::row_major(&mut y[oy0 * g.out_w..], out_ch, span, p),
            );
            oy0 = oy1;
        }
    }
    if let Some(b) = bias {
        for (co, plane) in y.chunks_mut(p).enumerate().take(out_ch) {
            let bv = b[co];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Accumulates `dw`, `db` and (when requested) `dx` for [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    out_ch: usize,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let kdim = g.col_rows();
    let p = g.out_pixels();
    if let Some(db) = db {
        for (co, plane) in dy.chunks(p).enumerate().take(out_ch) {
            db[co] += plane.iter().copied().sum::<T>();
        }
    }
    if is_pointwise(g) {
        if let Some(dw) = dw {
            gemm(
                T::one(),
                MatRef::row_major(dy, out_ch, p, p),
                MatRef::row_major(x, kdim, p, p).t(),
                T::one(),
                MatMut::row_major(dw, out_ch, kdim, kdim),
            );
        }
        if let Some(dx) = dx {
            gemm(
                T::one(),
                MatRef::row_major(w, out_ch, kdim, kdim).t(),
                MatRef::row_major(dy, out_ch, p, p),
                T::one(),
                MatMut::row_major(dx, kdim, p, p),
            );
        }
        return;
    }
    let tr = g.tile_rows();
    let need_dw = dw.is_some();
    let mut cols = vec![T::zero(); if need_dw { kdim * tr * g.out_w } else { 0 }];
    let mut dcols = vec![T::zero(); if dx.is_some() { kdim * tr * g.out_w } else { 0 }];
    let mut dw = dw;
    let mut dx = dx;
    let mut oy0 = 0;
    while oy0 < g.out_h {
        let oy1 = (oy0 + tr).min(g.out_h);
        let span = (oy1 - oy0) * g.out_w;
        let dy_tile = MatRef::row_major(&dy[oy0 * g.out_w..], out_ch, span, p);
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, x, oy0, oy1, &mut cols);
            gemm(
                T::one(),
                dy_tile,
                MatRef::row_major(&cols[..kdim * span], kdim, span, span).t(),
                T::one(),
                MatMut::row_major(dw, out_ch, kdim, kdim),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                T::one(),
                MatRef::row_major(w, out_ch, kdim, kdim).t(),
                dy_tile,
                T::zero(),
                MatMut::row_major(&mut dcols[..kdim * span], kdim, span, span),
            );
            col2im(g, &dcols, oy0, oy1, dx);
        }
        oy0 = oy1;
    }
}

/// Transposed convolution: `y = col2im(w^T * x) + b`, with `g` describing the
/// output (`g.channels == out_ch`, `g.out_h x g.out_w == input grid`).
pub fn conv_transpose2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, in_ch: usize, y: &mut [T]) {
    let kdim = g.col_rows();
    let p = g.out_pixels();
    y.fill(T::zero());
    let tr = g.tile_rows();
    let mut cols = vec![T::zero(); kdim * tr * g.out_w];
    let mut oy0 = 0;
    while oy0 < g.out_h {
        let oy1 = (oy0 + tr).min(g.out_h);
        let span = (oy1 - oy0) * g.out_w;
        gemm(
            T::one(),
            MatRef::row_major(w, in_ch, kdim, kdim).t(),
            MatRef::row_major(&x[oy0 * g.out_w..], in_ch, span, p),
            T::zero(),
            MatMut::row_major(&mut cols[..kdim * span], kdim, span, span),
        );
        col2im(g, &cols, oy0, oy1, y);
        oy0 = oy1;
    }
    if let Some(b) = bias {
        let hw = g.height * g.width;
        for (co, plane) in y.chunks_mut(hw).enumerate().take(g.channels) {
            let bv = b[co];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    in_ch: usize,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let kdim = g.col_rows();
    let p = g.out_pixels();
    if let Some(db) = db {
        let hw = g.height * g.width;
        for (co, plane) in dy.chunks(hw).enumerate().take(g.channels) {
            db[co] += plane.iter().copied().sum::<T>();
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let tr = g.tile_rows();
    let mut cols = vec![T::zero(); kdim * tr * g.out_w];
    let mut dw = dw;
    let mut dx = dx;
    let mut oy0 = 0;
    while oy0 < g.out_h {
        let oy1 = (oy0 + tr).min(g.out_h);
        let span = (oy1 - oy0) * g.out_w;
        im2col(g, dy, oy0, oy1, &mut cols);
        let cols_m = MatRef::row_major(&cols[..kdim * span], kdim, span, span);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                T::one(),
                MatRef::row_major(w, in_ch, kdim, kdim),
                cols_m,
                T::one(),
                MatMut::row_major(&mut dx[oy0 * g.out_w..], in_ch, span, p),
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm(
                T::one(),
                MatRef::row_major(&x[oy0 * g.out_w..], in_ch, span, p),
                cols_m.t(),
                T::one(),
                MatMut::row_major(dw, in_ch, kdim, kdim),
            );
        }
        oy0 = oy1;
    }
}

//! Dense three-channel grids.
//!
//! Images, UV textures and attack search points all share the same layout:
//! row-major `height × width × 3` samples stored as `f64`. Pixel `(row, col)`
//! has its center at `(col + 0.5, row + 0.5)` in continuous coordinates.

use crate::error::{Error, Result};

/// A `height × width × 3` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// An image with values nominally in `[0, 1]`.
pub type Image = RgbGrid;

/// A signed per-texel RGB field in the shared UV space.
pub type UvTexture = RgbGrid;

impl RgbGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, value: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&value);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "grid {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of scalar entries (`height · width · 3`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, value: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&value);
    }

    pub fn same_dims(&self, other: &RgbGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Elementwise `self + other`.
    ///
    /// Panics if the dimensions differ.
    pub fn add(&self, other: &RgbGrid) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise `self - other`.
    ///
    /// Panics if the dimensions differ.
    pub fn sub(&self, other: &RgbGrid) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &RgbGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.same_dims(other), "grid dimension mismatch");
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_distance(&self, other: &RgbGrid) -> f64 {
        assert!(self.same_dims(other), "grid dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_distance(&self, other: &RgbGrid) -> f64 {
        assert!(self.same_dims(other), "grid dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| {
            self.pixel(r, self.width - 1 - c)
        })
    }

    /// Round every entry through `f32`, so a tensor-file round trip is lossless.
    pub fn quantize_f32(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bilinear resampling to a new size (half-pixel centers, edge clamped).
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let ys: Vec<(usize, usize, f64)> = (0..height)
            .map(|r| lerp_taps((r as f64 + 0.5) * sy - 0.5, self.height))
            .collect();
        let xs: Vec<(usize, usize, f64)> = (0..width)
            .map(|c| lerp_taps((c as f64 + 0.5) * sx - 0.5, self.width))
            .collect();
        let mut out = Vec::with_capacity(height * width * 3);
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let p00 = self.pixel(y0, x0);
                let p01 = self.pixel(y0, x1);
                let p10 = self.pixel(y1, x0);
                let p11 = self.pixel(y1, x1);
                for ch in 0..3 {
                    let top = p00[ch] + (p01[ch] - p00[ch]) * tx;
                    let bottom = p10[ch] + (p11[ch] - p10[ch]) * tx;
                    out.push(top + (bottom - top) * ty);
                }
            }
        }
        Self {
            height,
            width,
            data: out,
        }
    }

    /// Nearest-neighbour resampling to a new size.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let rows: Vec<usize> = (0..height)
            .map(|r| (r * self.height / height).min(self.height - 1))
            .collect();
        let cols: Vec<usize> = (0..width)
            .map(|c| (c * self.width / width).min(self.width - 1))
            .collect();
        let mut out = Vec::with_capacity(height * width * 3);
        for &r in &rows {
            for &c in &cols {
                out.extend_from_slice(&self.pixel(r, c));
            }
        }
        Self {
            height,
            width,
            data: out,
        }
    }

    /// Block-average downsampling to a coarser grid. Block `i` spans source
    /// rows `[i·H/h, (i+1)·H/h)` (floor division); empty blocks average to 0.
    pub fn resize_area(&self, height: usize, width: usize) -> Self {
        let mut sums = vec![0.0; height * width * 3];
        let mut counts = vec![0usize; height * width];
        for r in 0..self.height {
            let br = bin_of(r, self.height, height);
            for c in 0..self.width {
                let bc = bin_of(c, self.width, width);
                let b = br * width + bc;
                counts[b] += 1;
                let p = self.pixel(r, c);
                for ch in 0..3 {
                    sums[b * 3 + ch] += p[ch];
                }
            }
        }
        for (b, &n) in counts.iter().enumerate() {
            if n > 0 {
                for ch in 0..3 {
                    sums[b * 3 + ch] /= n as f64;
                }
            }
        }
        Self {
            height,
            width,
            data: sums,
        }
    }
}

/// Output bin of source index `i` when `n_src` samples are split into `n_dst`
/// contiguous bins with boundaries at `floor(k·n_src/n_dst)`.
#[inline]
pub(crate) fn bin_of(i: usize, n_src: usize, n_dst: usize) -> usize {
    let mut b = (i * n_dst) / n_src;
    while b + 1 < n_dst && ((b + 1) * n_src) / n_dst <= i {
        b += 1;
    }
    while b > 0 && (b * n_src) / n_dst > i {
        b -= 1;
    }
    b
}

#[inline]
pub(crate) fn lerp_taps(pos: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64)
}

/// A boolean per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid("mask size mismatch"));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn at(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn inverted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_partition_source() {
        for n_src in 1..40 {
            for n_dst in 1..=n_src {
                let mut prev = 0;
                for i in 0..n_src {
                    let b = bin_of(i, n_src, n_dst);
                    assert!(b >= prev && b < n_dst);
                    assert!((b * n_src) / n_dst <= i);
                    assert!(b + 1 == n_dst || ((b + 1) * n_src) / n_dst > i);
                    prev = b;
                }
                assert_eq!(bin_of(n_src - 1, n_src, n_dst), n_dst - 1);
            }
        }
    }

    #[test]
    fn bilinear_resize_identity_and_constant() {
        let g = RgbGrid::from_fn(5, 7, |r, c| [r as f64, c as f64, (r * c) as f64]);
        assert_eq!(g.resize_bilinear(5, 7), g);
        let k = RgbGrid::filled(3, 3, [0.25, -1.0, 2.0]);
        let up = k.resize_bilinear(8, 11);
        assert!(up.as_slice().chunks(3).all(|p| p == [0.25, -1.0, 2.0]));
    }

    #[test]
    fn nearest_upsample_keeps_values() {
        let g = RgbGrid::from_fn(2, 2, |r, c| [if (r + c) % 2 == 0 { 1.0 } else { -1.0 }; 3]);
        let up = g.resize_nearest(4, 4);
        assert_eq!(up.pixel(0, 0), [1.0; 3]);
        assert_eq!(up.pixel(1, 1), [1.0; 3]);
        assert_eq!(up.pixel(0, 2), [-1.0; 3]);
        assert_eq!(up.pixel(3, 3), [1.0; 3]);
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let g = RgbGrid::from_fn(4, 4, |r, c| [(r * 4 + c) as f64; 3]);
        let d = g.resize_area(2, 2);
        assert_eq!(d.pixel(0, 0), [2.5; 3]);
        assert_eq!(d.pixel(1, 1), [12.5; 3]);
    }

    #[test]
    fn flip_is_involution() {
        let g = RgbGrid::from_fn(3, 5, |r, c| [r as f64, c as f64, 1.0]);
        assert_eq!(g.flip_horizontal().flip_horizontal(), g);
        assert_eq!(g.flip_horizontal().pixel(0, 0), [0.0, 4.0, 1.0]);
    }
}

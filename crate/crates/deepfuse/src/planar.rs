//! Single-channel rasters and RGB plane bundles.
//!
//! All metric and network math operates on [`PlanarImage`]: a row-major
//! grid of `f64` intensities, normally in `[0, 1]`. Color images are
//! carried as three planes ([`RgbImageF`]) so each stage can work on the
//! channel it cares about without pixel-format bookkeeping.

use crate::error::{Error, Result};

/// A single-channel 2-D raster of normalized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PlanarImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        PlanarImage { height, width, data: vec![0.0; height * width] }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        PlanarImage { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::config(format!(
                "plane data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(PlanarImage { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        PlanarImage { height, width, data }
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

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, y: usize) -> &mut [f64] {
        &mut self.data[y * self.width..(y + 1) * self.width]
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

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PlanarImage {
        PlanarImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped01(&self) -> PlanarImage {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn same_dims(&self, other: &PlanarImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// 2x box-filter downsample. Odd trailing rows/columns are dropped.
    pub fn box_downsample2(&self) -> PlanarImage {
        let oh = self.height / 2;
        let ow = self.width / 2;
        let mut out = PlanarImage::zeros(oh, ow);
        for y in 0..oh {
            let top = self.row(2 * y);
            let bot = self.row(2 * y + 1);
            let dst = out.row_mut(y);
            for x in 0..ow {
                dst[x] = (top[2 * x] + top[2 * x + 1] + bot[2 * x] + bot[2 * x + 1]) * 0.25;
            }
        }
        out
    }

    /// Adjoint of [`box_downsample2`](Self::box_downsample2): spreads each
    /// coarse gradient value over the 2x2 block it averaged. `parent_dims`
    /// restores rows/columns dropped by odd sizes (they receive zero).
    pub fn box_upsample2_adjoint(&self, parent_dims: (usize, usize)) -> PlanarImage {
        let (ph, pw) = parent_dims;
        let mut out = PlanarImage::zeros(ph, pw);
        for y in 0..self.height {
            for x in 0..self.width {
                let g = self.get(y, x) * 0.25;
                out.set(2 * y, 2 * x, g);
                out.set(2 * y, 2 * x + 1, g);
                out.set(2 * y + 1, 2 * x, g);
                out.set(2 * y + 1, 2 * x + 1, g);
            }
        }
        out
    }
}

/// An RGB image held as three normalized planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImageF {
    pub r: PlanarImage,
    pub g: PlanarImage,
    pub b: PlanarImage,
}

impl RgbImageF {
    pub fn new(r: PlanarImage, g: PlanarImage, b: PlanarImage) -> Result<Self> {
        if !r.same_dims(&g) || !r.same_dims(&b) {
            return Err(Error::config("RGB planes must share dimensions"));
        }
        Ok(RgbImageF { r, g, b })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        RgbImageF {
            r: PlanarImage::filled(height, width, rgb[0]),
            g: PlanarImage::filled(height, width, rgb[1]),
            b: PlanarImage::filled(height, width, rgb[2]),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }

    pub fn height(&self) -> usize {
        self.r.height()
    }

    pub fn width(&self) -> usize {
        self.r.width()
    }

    pub fn same_dims(&self, other: &RgbImageF) -> bool {
        self.r.same_dims(&other.r)
    }

    pub fn planes(&self) -> [&PlanarImage; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> RgbImageF {
        RgbImageF { r: self.r.map(f), g: self.g.map(f), b: self.b.map(f) }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.r.get(y, x), self.g.get(y, x), self.b.get(y, x)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_averages_blocks() {
        let img = PlanarImage::from_vec(2, 4, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let d = img.box_downsample2();
        assert_eq!(d.dims(), (1, 2));
        assert_eq!(d.get(0, 0), (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        assert_eq!(d.get(0, 1), (2.0 + 3.0 + 6.0 + 7.0) / 4.0);
    }

    #[test]
    fn downsample_drops_odd_edges() {
        let img = PlanarImage::filled(5, 3, 1.0);
        let d = img.box_downsample2();
        assert_eq!(d.dims(), (2, 1));
    }

    #[test]
    fn upsample_adjoint_matches_inner_product() {
        // <down(x), g> == <x, up_adjoint(g)> is the defining identity.
        let x = PlanarImage::from_fn(4, 6, |y, x| (y * 7 + x) as f64 * 0.1);
        let g = PlanarImage::from_fn(2, 3, |y, x| (y + x) as f64 - 0.7);
        let dx = x.box_downsample2();
        let lhs: f64 = dx
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let up = g.box_upsample2_adjoint(x.dims());
        let rhs: f64 = x
            .as_slice()
            .iter()
            .zip(up.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

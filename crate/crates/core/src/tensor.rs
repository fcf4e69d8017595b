//! Feature maps, images and small dense helpers shared by every module.

use ndarray::{Array2, Array3, ArrayView1, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// A `C × n × n` activation block taken from the last convolutional layer.
///
/// A "feature column" is the `C`-vector at one spatial location `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        ensure!(
            c > 0 && h > 0,
            Validation,
            "feature map must be non-empty, got {c}x{h}x{w}"
        );
        ensure!(h == w, Validation, "feature map must be spatially square, got {h}x{w}");
        Ok(Self { data })
    }

    pub fn zeros(channels: usize, side: usize) -> Self {
        Self {
            data: Array3::zeros((channels, side, side)),
        }
    }

    pub fn from_vec(channels: usize, side: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == channels * side * side,
            Validation,
            "expected {} values for a {channels}x{side}x{side} map, got {}",
            channels * side * side,
            values.len()
        );
        let data = Array3::from_shape_vec((channels, side, side), values)
            .map_err(|e| crate::Error::Validation(e.to_string()))?;
        Self::new(data)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn side(&self) -> usize {
        self.data.dim().1
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn column(&self, i: usize, j: usize) -> Vec<f64> {
        self.data.slice(ndarray::s![.., i, j]).to_vec()
    }

    pub fn column_view(&self, i: usize, j: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![.., i, j])
    }

    /// Overwrites every channel at `(i, j)`.
    pub fn set_column(&mut self, i: usize, j: usize, column: &[f64]) -> Result<()> {
        ensure!(
            column.len() == self.channels(),
            Validation,
            "column has {} channels, map has {}",
            column.len(),
            self.channels()
        );
        ensure!(
            i < self.side() && j < self.side(),
            Validation,
            "location ({i},{j}) outside a {0}x{0} grid",
            self.side()
        );
        for (dst, &v) in self.data.slice_mut(ndarray::s![.., i, j]).iter_mut().zip(column) {
            *dst = v;
        }
        Ok(())
    }

    /// Mean over channels, giving an `n × n` map.
    pub fn channel_mean(&self) -> Array2<f64> {
        self.data.mean_axis(Axis(0)).expect("non-empty channel axis")
    }

    pub fn as_flat(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }
}

/// Raw RGB image in `[0, 1]`, stored channel-first as `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        ensure!(
            c > 0 && h > 0 && w > 0,
            Validation,
            "image must be non-empty, got {c}x{h}x{w}"
        );
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Decodes any format the `image` crate understands into an RGB image.
    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        Self { data }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (c, h, w) = self.data.dim();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch: usize| {
                let v = self.data[[ch.min(c - 1), y as usize, x as usize]];
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Row-major `(i, j)` location on an `n × n` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub i: usize,
    pub j: usize,
}

impl GridPos {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn flat(self, side: usize) -> usize {
        self.i * side + self.j
    }

    pub fn from_flat(k: usize, side: usize) -> Self {
        Self {
            i: k / side,
            j: k % side,
        }
    }
}

pub(crate) fn cosine(a: ArrayView1<'_, f64>, b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

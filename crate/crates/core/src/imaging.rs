//! Resampling and blurring on plain arrays.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Image;

/// Bilinear resampling with half-pixel centres (corner alignment off),
/// clamping sample positions to the source border.
pub fn resize_bilinear(src: ArrayView2<'_, f64>, height: usize, width: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    let sy = sh as f64 / height as f64;
    let sx = sw as f64 / width as f64;
    let axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sx, sw)).collect();
    let mut out = Array2::zeros((height, width));
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, sh);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
            let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
            out[[y, x]] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

pub fn resize_image(image: &Image, height: usize, width: usize) -> Image {
    let src = image.array();
    let mut out = Array3::zeros((image.channels(), height, width));
    for (c, mut plane) in out.outer_iter_mut().enumerate() {
        plane.assign(&resize_bilinear(src.index_axis(ndarray::Axis(0), c), height, width));
    }
    Image::new(out).expect("non-empty resize target")
}

/// Gaussian blur used as the "removed" source in insertion/deletion curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub kernel_size: usize,
    pub sigma: f64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            kernel_size: 11,
            sigma: 5.0,
        }
    }
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.kernel_size % 2 == 1,
            Validation,
            "blur kernel size must be odd, got {}",
            self.kernel_size
        );
        ensure!(
            self.sigma > 0.0,
            Validation,
            "blur sigma must be positive, got {}",
            self.sigma
        );
        Ok(())
    }

    fn taps(&self) -> Vec<f64> {
        let r = (self.kernel_size / 2) as isize;
        let raw: Vec<f64> = (-r..=r)
            .map(|d| (-((d * d) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &Image, spec: BlurSpec) -> Result<Image> {
    spec.validate()?;
    let taps = spec.taps();
    let r = (spec.kernel_size / 2) as isize;
    let (c, h, w) = image.array().dim();
    let src = image.array();
    let mut tmp = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &wt) in taps.iter().enumerate() {
                    let xx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += wt * src[[ch, y, xx]];
                }
                tmp[[ch, y, x]] = acc;
            }
        }
    }
    let mut out = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &wt) in taps.iter().enumerate() {
                    let yy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += wt * tmp[[ch, yy, x]];
                }
                out[[ch, y, x]] = acc;
            }
        }
    }
    Image::new(out)
}

//! Heatmap overlays for image-resolution saliency maps.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::{ensure, Result};
use crate::store::write_atomic;
use crate::tensor::Image;

/// Name of the colormap used for every overlay.
pub const COLORMAP: &str = "turbo";
/// Heatmap weight in the blend at full saliency.
pub const OVERLAY_ALPHA: f64 = 0.6;

/// Colours a map scaled by its maximum. An all-zero map renders as the
/// bottom colour everywhere.
pub fn heatmap(map: ArrayView2<'_, f64>) -> RgbImage {
    let (h, w) = map.dim();
    let max = map.iter().copied().fold(0.0, f64::max);
    let mut out = RgbImage::new(w as u32, h as u32);
    for ((y, x), &v) in map.indexed_iter() {
        let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
        let c = colorous::TURBO.eval_continuous(t);
        out.put_pixel(x as u32, y as u32, Rgb([c.r, c.g, c.b]));
    }
    out
}

/// Blends the heatmap over the image, weighting each pixel by its scaled
/// saliency so unexplained regions keep the original look.
pub fn overlay(image: &Image, map: ArrayView2<'_, f64>) -> Result<RgbImage> {
    ensure!(
        map.dim() == (image.height(), image.width()),
        Validation,
        "map is {:?} but the image is {}×{}",
        map.dim(),
        image.height(),
        image.width()
    );
    let base = image.to_rgb8();
    let heat = heatmap(map);
    let max = map.iter().copied().fold(0.0, f64::max);
    let mut out = base.clone();
    for ((y, x), &v) in map.indexed_iter() {
        let a = if max > 0.0 {
            OVERLAY_ALPHA * (v / max).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (b, hm) = (base.get_pixel(x as u32, y as u32), heat.get_pixel(x as u32, y as u32));
        let mix = |k: usize| ((1.0 - a) * b[k] as f64 + a * hm[k] as f64).round() as u8;
        out.put_pixel(x as u32, y as u32, Rgb([mix(0), mix(1), mix(2)]));
    }
    Ok(out)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

//! Synthetic "fine-grained" images: every class shares the same body
//! silhouette and differs only in the marker drawn in a fixed head region.
//!
//! A fraction of images also carry a weaker decoy marker of another class on
//! the body, which is what makes a pooled classifier occasionally wrong.

use std::collections::HashMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetHandle, Keypoint, Sample, SampleSource, Split};
use crate::error::{ensure, Result};
use crate::store::{hash_bytes, read_file, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Half-width of the marker stamp; markers are `(2R+1)²` pixels.
const R: i32 = 4;

const SHAPE_NAMES: [&str; 12] = [
    "square", "disc", "triangle", "plus", "hbar", "vbar", "diamond", "ring", "frame", "cross", "corner", "tee",
];

fn stamp(shape: usize, dx: i32, dy: i32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    let r2 = dx * dx + dy * dy;
    match shape {
        0 => ax <= 3 && ay <= 3,
        1 => r2 <= 16,
        2 => (-3..=3).contains(&dy) && ax <= (dy + 3) / 2 + 1,
        3 => (ax <= 1 && ay <= 4) || (ay <= 1 && ax <= 4),
        4 => ay <= 1 && ax <= 4,
        5 => ax <= 1 && ay <= 4,
        6 => ax + ay <= 4,
        7 => (9..=16).contains(&r2),
        8 => ax <= 4 && ay <= 4 && (ax >= 3 || ay >= 3),
        9 => ax <= 4 && (ax - ay).abs() <= 1,
        10 => ((-4..=-2).contains(&dx) && ay <= 4) || ((2..=4).contains(&dy) && ax <= 4),
        11 => ((-4..=-2).contains(&dy) && ax <= 4) || (ax <= 1 && ay <= 4),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    /// Probability that an image also carries a decoy marker.
    pub decoy_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            train_per_class: 100,
            val_per_class: 100,
            image_size: 64,
            noise_std: 0.05,
            decoy_rate: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.classes >= 2,
            Configuration,
            "need at least 2 classes, got {}",
            self.classes
        );
        ensure!(
            self.classes <= SHAPE_NAMES.len(),
            Configuration,
            "at most {} marker shapes are available, asked for {}",
            SHAPE_NAMES.len(),
            self.classes
        );
        ensure!(
            self.image_size >= 32,
            Configuration,
            "image_size must be at least 32, got {}",
            self.image_size
        );
        ensure!(
            (0.0..=1.0).contains(&self.decoy_rate),
            Configuration,
            "decoy_rate must lie in [0, 1]"
        );
        ensure!(self.noise_std >= 0.0, Configuration, "noise_std must be non-negative");
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Where the discriminative marker was drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartRegion {
    pub cx: i32,
    pub cy: i32,
    pub half: i32,
}

impl PartRegion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let h = self.half as f64;
        (x - self.cx as f64).abs() <= h && (y - self.cy as f64).abs() <= h
    }
}

struct Rendered {
    image: RgbImage,
    part: PartRegion,
}

fn sample_seed(seed: u64, split: Split, class: usize, index: usize) -> u64 {
    let split_tag = match split {
        Split::Train => 0u64,
        Split::Val => 1u64,
    };
    // splitmix64 over the packed coordinates
    let mut z = seed ^ (split_tag << 62) ^ ((class as u64) << 40) ^ (index as u64) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn render(cfg: &SyntheticConfig, class: usize, rng: &mut ChaCha8Rng) -> Rendered {
    let s = cfg.image_size as i32;
    let scale = cfg.image_size as f64 / 64.0;
    let mut px = vec![[0.0f64; 3]; (s * s) as usize];

    let bg = [
        rng.random_range(0.10..0.25),
        rng.random_range(0.20..0.35),
        rng.random_range(0.25..0.40),
    ];
    for y in 0..s {
        for x in 0..s {
            let shade = 0.9 + 0.2 * (y as f64 / s as f64);
            let p = &mut px[(y * s + x) as usize];
            for c in 0..3 {
                p[c] = bg[c] * shade;
            }
        }
    }

    // body: a shared ellipse silhouette
    let bx = 32.0 * scale + rng.random_range(-3.0..3.0) * scale;
    let by = 38.0 * scale + rng.random_range(-3.0..3.0) * scale;
    let (rx, ry) = (
        rng.random_range(19.0..22.0) * scale,
        rng.random_range(12.0..15.0) * scale,
    );
    let body = [
        rng.random_range(0.45..0.60),
        rng.random_range(0.30..0.42),
        rng.random_range(0.18..0.28),
    ];
    for y in 0..s {
        for x in 0..s {
            let (u, v) = ((x as f64 - bx) / rx, (y as f64 - by) / ry);
            if u * u + v * v <= 1.0 {
                px[(y * s + x) as usize] = body;
            }
        }
    }

    // head patch carrying the marker
    let hx = (bx - 11.0 * scale).round() as i32 + rng.random_range(-2..=2);
    let hy = (by - 14.0 * scale).round() as i32 + rng.random_range(-2..=2);
    let head_r = (R + 3) as f64;
    let head = [body[0] * 0.8, body[1] * 0.8, body[2] * 0.8];
    for y in (hy - R - 3)..=(hy + R + 3) {
        for x in (hx - R - 3)..=(hx + R + 3) {
            let d = (((x - hx).pow(2) + (y - hy).pow(2)) as f64).sqrt();
            if d <= head_r && (0..s).contains(&x) && (0..s).contains(&y) {
                px[(y * s + x) as usize] = head;
            }
        }
    }
    let ink = [
        rng.random_range(0.90..1.0),
        rng.random_range(0.85..0.95),
        rng.random_range(0.10..0.25),
    ];
    draw_marker(&mut px, s, class, hx, hy, ink, 1.0);

    if rng.random_bool(cfg.decoy_rate) {
        let mut other = rng.random_range(0..cfg.classes - 1);
        if other >= class {
            other += 1;
        }
        let dx = (bx + rng.random_range(4.0..11.0) * scale).round() as i32;
        let dy = (by + rng.random_range(-1.0..5.0) * scale).round() as i32;
        let strength = rng.random_range(0.55..0.85);
        draw_marker(&mut px, s, other, dx, dy, ink, strength);
    }

    let noise = Normal::new(0.0, cfg.noise_std.max(1e-12)).expect("valid std");
    let mut image = RgbImage::new(s as u32, s as u32);
    for y in 0..s {
        for x in 0..s {
            let p = px[(y * s + x) as usize];
            let mut out = [0u8; 3];
            for c in 0..3 {
                let v = if cfg.noise_std > 0.0 {
                    p[c] + noise.sample(rng)
                } else {
                    p[c]
                };
                out[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            image.put_pixel(x as u32, y as u32, Rgb(out));
        }
    }
    Rendered {
        image,
        part: PartRegion {
            cx: hx,
            cy: hy,
            half: R,
        },
    }
}

fn draw_marker(px: &mut [[f64; 3]], s: i32, shape: usize, cx: i32, cy: i32, ink: [f64; 3], alpha: f64) {
    for dy in -R..=R {
        for dx in -R..=R {
            let (x, y) = (cx + dx, cy + dy);
            if !stamp(shape, dx, dy) || !(0..s).contains(&x) || !(0..s).contains(&y) {
                continue;
            }
            let p = &mut px[(y * s + x) as usize];
            for c in 0..3 {
                p[c] = (1.0 - alpha) * p[c] + alpha * ink[c];
            }
        }
    }
}

/// Keypoints of the discriminative part: centre then the four stamp corners.
fn part_keypoints(part: &PartRegion) -> Vec<Keypoint> {
    let (cx, cy, h) = (part.cx as f64, part.cy as f64, part.half as f64);
    [
        (cx, cy),
        (cx - h, cy - h),
        (cx + h, cy - h),
        (cx - h, cy + h),
        (cx + h, cy + h),
    ]
    .into_iter()
    .enumerate()
    .map(|(k, (x, y))| Keypoint {
        part_id: k + 1,
        x,
        y,
        visible: true,
    })
    .collect()
}

/// Deterministic synthetic dataset; identical bytes for identical
/// `(config, seed)`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<DatasetHandle> {
    cfg.validate()?;
    let mut images = Vec::new();
    let mut parts = HashMap::new();
    let mut splits: HashMap<Split, Vec<Sample>> = HashMap::new();
    for (split, per_class) in [(Split::Train, cfg.train_per_class), (Split::Val, cfg.val_per_class)] {
        let tag = match split {
            Split::Train => "train",
            Split::Val => "val",
        };
        let list = splits.entry(split).or_default();
        // interleave classes so dataset order is not class-sorted
        for index in 0..per_class {
            for class in 0..cfg.classes {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, split, class, index));
                let rendered = render(cfg, class, &mut rng);
                let id = format!("{tag}/c{class:02}/{index:04}");
                parts.insert(id.clone(), part_keypoints(&rendered.part));
                list.push(Sample {
                    id,
                    source: SampleSource::Memory(images.len()),
                    label: class,
                });
                images.push(rendered.image);
            }
        }
    }
    let class_names = SHAPE_NAMES[..cfg.classes].iter().map(|s| s.to_string()).collect();
    let dataset_id = format!("synth-k{}-s{}-{}", cfg.classes, seed, &cfg.hash()[..8]);
    Ok(DatasetHandle::new(
        dataset_id,
        class_names,
        splits.remove(&Split::Train).unwrap_or_default(),
        splits.remove(&Split::Val).unwrap_or_default(),
        parts,
        images,
    ))
}

/// Recorded next to a synthetic run so the same images can be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub seed: u64,
    pub config: SyntheticConfig,
    pub config_hash: String,
    pub dataset_id: String,
}

pub fn write_synthetic_manifest(dir: &Path, cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticManifest> {
    let manifest = SyntheticManifest {
        seed,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        dataset_id: format!("synth-k{}-s{}-{}", cfg.classes, seed, &cfg.hash()[..8]),
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_synthetic_manifest(dir: &Path) -> Result<SyntheticManifest> {
    let manifest: SyntheticManifest = serde_json::from_slice(&read_file(&dir.join(MANIFEST_FILE))?)?;
    ensure!(
        manifest.config_hash == manifest.config.hash(),
        Data,
        "manifest in {} has a stale config hash",
        dir.display()
    );
    Ok(manifest)
}

/// Re-derives the marker placement for a sample, for auditing the keypoints.
pub fn placement(cfg: &SyntheticConfig, seed: u64, split: Split, class: usize, index: usize) -> PartRegion {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, split, class, index));
    render(cfg, class, &mut rng).part
}

//! Insertion/deletion curves, the compact activation score and part
//! statistics.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Keypoint, PartRegion};
use crate::error::{ensure, Result};
use crate::imaging::{gaussian_blur, BlurSpec};
use crate::model::ModelBundle;
use crate::saliency::ShapleyMap;
use crate::tensor::{FeatureMap, Image};

pub const DEFAULT_STEP_FRACTION: f64 = 0.018;
/// Values at or below this count as zero when measuring support.
pub const SUPPORT_EPSILON: f64 = 1e-8;
/// Frames scored per batch while tracing a curve.
const FRAME_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Insertion,
    Deletion,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Insertion => "insertion",
            CurveKind::Deletion => "deletion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub kind: CurveKind,
    pub class_index: usize,
    pub step_fraction: f64,
    pub blur: BlurSpec,
    /// One point per step plus the untouched image at fraction 0.
    pub points: Vec<CurvePoint>,
    /// Pixels replaced after each point.
    pub pixel_counts: Vec<usize>,
    pub auc: f64,
}

impl CurveResult {
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,probability\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.fraction, p.probability));
        }
        out
    }
}

fn check_step(step_fraction: f64) -> Result<()> {
    ensure!(
        step_fraction > 0.0 && step_fraction <= 1.0,
        Validation,
        "step fraction must lie in (0, 1], got {step_fraction}"
    );
    Ok(())
}

/// Number of replacement steps, `⌈1 / step⌉`.
pub fn step_count(step_fraction: f64) -> Result<usize> {
    check_step(step_fraction)?;
    // the guard keeps exact divisors such as 0.25 from rounding up a step
    Ok(((1.0 / step_fraction) * (1.0 - 1e-12)).ceil() as usize)
}

/// Pixels replaced once `k` of `steps` steps are done.
pub fn pixels_after(k: usize, steps: usize, step_fraction: f64, total: usize) -> usize {
    if k >= steps {
        return total;
    }
    let exact = k as f64 * step_fraction * total as f64;
    ((exact * (1.0 - 1e-12)).ceil() as usize).min(total)
}

/// Flat pixel indices by descending saliency; ties in row-major order.
pub fn saliency_order(saliency: ArrayView2<'_, f64>) -> Vec<usize> {
    let flat: Vec<f64> = saliency.iter().copied().collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    order
}

/// Boolean masks of replaced pixels after each step, starting with none.
pub fn step_masks(saliency: ArrayView2<'_, f64>, step_fraction: f64) -> Result<Vec<Array2<bool>>> {
    let steps = step_count(step_fraction)?;
    let order = saliency_order(saliency);
    let total = order.len();
    let mut mask = Array2::from_elem(saliency.raw_dim(), false);
    let mut masks = vec![mask.clone()];
    let mut done = 0;
    let w = saliency.ncols();
    for k in 1..=steps {
        let upto = pixels_after(k, steps, step_fraction, total);
        for &p in &order[done..upto] {
            mask[[p / w, p % w]] = true;
        }
        done = upto;
        masks.push(mask.clone());
    }
    Ok(masks)
}

/// Pixels under `mask` come from `replacement`, the rest from `base`.
pub fn compose(base: &Image, replacement: &Image, mask: ArrayView2<'_, bool>) -> Image {
    let mut out = base.clone();
    for (mut plane, src) in out.array_mut().outer_iter_mut().zip(replacement.array().outer_iter()) {
        Zip::from(&mut plane).and(&src).and(mask).for_each(|o, &r, &m| {
            if m {
                *o = r;
            }
        });
    }
    out
}

fn curve(
    kind: CurveKind,
    bundle: &ModelBundle,
    image: &Image,
    saliency: ArrayView2<'_, f64>,
    class_index: usize,
    step_fraction: f64,
    blur: BlurSpec,
) -> Result<CurveResult> {
    ensure!(
        saliency.dim() == (image.height(), image.width()),
        Validation,
        "saliency is {:?} but the image is {}×{}",
        saliency.dim(),
        image.height(),
        image.width()
    );
    ensure!(
        class_index < bundle.class_count,
        Validation,
        "class {class_index} out of range"
    );
    let blurred = gaussian_blur(image, blur)?;
    let masks = step_masks(saliency, step_fraction)?;
    let steps = masks.len() - 1;
    let (base, replacement) = match kind {
        CurveKind::Deletion => (image, &blurred),
        CurveKind::Insertion => (&blurred, image),
    };

    let mut probabilities = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(FRAME_BATCH) {
        let frames: Vec<Image> = chunk.iter().map(|m| compose(base, replacement, m.view())).collect();
        probabilities.extend(
            bundle
                .predict_batch(&frames)?
                .into_iter()
                .map(|s| s.probabilities[class_index]),
        );
    }
    let points: Vec<CurvePoint> = probabilities
        .into_iter()
        .enumerate()
        .map(|(k, probability)| CurvePoint {
            fraction: if k == steps { 1.0 } else { k as f64 * step_fraction },
            probability,
        })
        .collect();
    let pixel_counts = masks.iter().map(|m| m.iter().filter(|&&b| b).count()).collect();
    let auc = curve_auc(&points)?;
    Ok(CurveResult {
        kind,
        class_index,
        step_fraction,
        blur,
        points,
        pixel_counts,
        auc,
    })
}

/// Progressively blurs the most salient pixels first.
pub fn deletion_curve(
    bundle: &ModelBundle,
    image: &Image,
    saliency: ArrayView2<'_, f64>,
    class_index: usize,
    step_fraction: f64,
    blur: BlurSpec,
) -> Result<CurveResult> {
    curve(
        CurveKind::Deletion,
        bundle,
        image,
        saliency,
        class_index,
        step_fraction,
        blur,
    )
}

/// Starts from the blurred image and restores the most salient pixels first.
pub fn insertion_curve(
    bundle: &ModelBundle,
    image: &Image,
    saliency: ArrayView2<'_, f64>,
    class_index: usize,
    step_fraction: f64,
    blur: BlurSpec,
) -> Result<CurveResult> {
    curve(
        CurveKind::Insertion,
        bundle,
        image,
        saliency,
        class_index,
        step_fraction,
        blur,
    )
}

/// Trapezoid rule over the fraction axis.
pub fn curve_auc(points: &[CurvePoint]) -> Result<f64> {
    ensure!(points.len() >= 2, Validation, "a curve needs at least two points");
    let mut area = 0.0;
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        ensure!(
            b.fraction > a.fraction,
            Validation,
            "fractions must increase, got {} after {}",
            b.fraction,
            a.fraction
        );
        area += (b.fraction - a.fraction) * (a.probability + b.probability) / 2.0;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactScore {
    pub xi: f64,
    /// Contribution ratio `Σdom / Σĝ`.
    pub c: f64,
    /// Total cell count.
    pub p_t: usize,
    /// Cells above `epsilon`.
    pub p_a: usize,
    pub epsilon: f64,
}

/// `ReLU(s* ⊙ channel-mean(h*))`, the reference map for the contribution ratio.
pub fn global_activation_map(s_star: &ShapleyMap, h_star: &FeatureMap) -> Result<Array2<f64>> {
    let mean = h_star.channel_mean();
    ensure!(
        mean.dim() == s_star.values.dim(),
        Validation,
        "shapley map is {:?}, feature grid is {:?}",
        s_star.values.dim(),
        mean.dim()
    );
    Ok((&s_star.values * &mean).mapv(|v| v.max(0.0)))
}

pub fn compact_activation_score(
    dom: ArrayView2<'_, f64>,
    global_map: ArrayView2<'_, f64>,
    epsilon: f64,
) -> Result<CompactScore> {
    ensure!(
        dom.dim() == global_map.dim(),
        Validation,
        "maps differ in shape: {:?} vs {:?}",
        dom.dim(),
        global_map.dim()
    );
    ensure!(epsilon >= 0.0, Validation, "epsilon must be non-negative");
    for (name, m) in [("dominant", dom), ("global", global_map)] {
        ensure!(
            m.iter().all(|&v| v >= 0.0 && v.is_finite()),
            Validation,
            "{name} map has negative or non-finite entries"
        );
    }
    let max = global_map.iter().copied().fold(0.0, f64::max);
    let c = if max > 0.0 {
        let normalised: f64 = global_map.iter().map(|&v| v / max).sum();
        dom.sum() / normalised
    } else {
        0.0
    };
    let p_t = dom.len();
    let p_a = dom.iter().filter(|&&v| v > epsilon).count();
    let xi = if p_a == 0 { 0.0 } else { c * p_t as f64 / p_a as f64 };
    Ok(CompactScore {
        xi,
        c,
        p_t,
        p_a,
        epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineGrainedStats {
    pub active_pixels: usize,
    pub keypoints_hit: usize,
    pub keypoints_total: usize,
    pub mean_contribution: f64,
    /// Keypoints skipped for lying outside the image.
    pub warnings: usize,
}

/// A keypoint at `(x, y)` falls in pixel `(⌊y⌋, ⌊x⌋)`.
pub fn keypoint_inclusion(dom_img: ArrayView2<'_, f64>, keypoints: &[Keypoint], epsilon: f64) -> FineGrainedStats {
    let (h, w) = dom_img.dim();
    let mut hit = 0;
    let mut total = 0;
    let mut warnings = 0;
    for kp in keypoints.iter().filter(|k| k.visible) {
        let inside = kp.x >= 0.0 && kp.y >= 0.0 && kp.x < w as f64 && kp.y < h as f64;
        if !inside {
            warnings += 1;
            continue;
        }
        total += 1;
        if dom_img[[kp.y as usize, kp.x as usize]] > epsilon {
            hit += 1;
        }
    }
    let active: Vec<f64> = dom_img.iter().copied().filter(|&v| v > epsilon).collect();
    let mean_contribution = if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    };
    FineGrainedStats {
        active_pixels: active.len(),
        keypoints_hit: hit,
        keypoints_total: total,
        mean_contribution,
        warnings,
    }
}

/// 1 inside the part's square region, 0 elsewhere.
pub fn region_saliency(region: &PartRegion, height: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((height, width), |(y, x)| {
        if region.contains(x as f64, y as f64) {
            1.0
        } else {
            0.0
        }
    })
}

pub fn random_saliency(height: usize, width: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((height, width), |_| rng.random::<f64>())
}

/// An image together with its class and the known location of the part
/// that decides it.
#[derive(Debug, Clone)]
pub struct PartSample {
    pub image: Image,
    pub class_index: usize,
    pub region: PartRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingTrial {
    pub seed: u64,
    pub informed_auc: f64,
    pub random_auc: f64,
}

impl OrderingTrial {
    pub fn informed_wins(&self) -> bool {
        self.informed_auc < self.random_auc
    }
}

/// Seeded trials comparing mean deletion AUC of part-region maps against
/// uniform-random maps over `per_trial` samples drawn without replacement.
pub fn deletion_ordering_trials(
    bundle: &ModelBundle,
    samples: &[PartSample],
    trials: usize,
    per_trial: usize,
    base_seed: u64,
    step_fraction: f64,
    blur: BlurSpec,
) -> Result<Vec<OrderingTrial>> {
    ensure!(
        per_trial >= 1 && per_trial <= samples.len(),
        Validation,
        "cannot draw {per_trial} of {} samples",
        samples.len()
    );
    let mut informed_cache: HashMap<usize, f64> = HashMap::new();
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let seed = base_seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..samples.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(per_trial);
        let mut informed = 0.0;
        let mut random = 0.0;
        for &k in &indices {
            let s = &samples[k];
            let (h, w) = (s.image.height(), s.image.width());
            informed += match informed_cache.get(&k) {
                Some(&auc) => auc,
                None => {
                    let map = region_saliency(&s.region, h, w);
                    let auc = deletion_curve(bundle, &s.image, map.view(), s.class_index, step_fraction, blur)?.auc;
                    informed_cache.insert(k, auc);
                    auc
                }
            };
            let map = random_saliency(h, w, &mut rng);
            random += deletion_curve(bundle, &s.image, map.view(), s.class_index, step_fraction, blur)?.auc;
        }
        out.push(OrderingTrial {
            seed,
            informed_auc: informed / per_trial as f64,
            random_auc: random / per_trial as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::model::{BundleMetadata, FeatureExtractor, GapLinearHead, Preprocess, ScoreMode};

    /// Quadrant means of the channel-averaged input as a 1×2×2 map.
    struct QuadrantMeans;

    impl FeatureExtractor for QuadrantMeans {
        fn extract(&self, input: &Array3<f64>) -> Result<FeatureMap> {
            let (_, h, w) = input.dim();
            let mut out = vec![0.0; 4];
            for ((_, y, x), &v) in input.indexed_iter() {
                out[(2 * y / h) * 2 + 2 * x / w] += v;
            }
            let per = (input.len() / 4) as f64;
            FeatureMap::from_vec(1, 2, out.into_iter().map(|v| v / per).collect())
        }
    }

    fn bundle(size: usize) -> ModelBundle {
        let head = GapLinearHead::zero_bias(array![[0.8], [-0.8]]);
        ModelBundle::new(
            "quadrants",
            Arc::new(QuadrantMeans),
            Arc::new(head),
            (size, size),
            (1, 2, 2),
            vec!["bright".into(), "dark".into()],
            Preprocess::default(),
            BundleMetadata::default(),
        )
        .unwrap()
    }

    fn noisy_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(Array3::from_shape_fn((3, size, size), |_| rng.random::<f64>())).unwrap()
    }

    fn pt(fraction: f64, probability: f64) -> CurvePoint {
        CurvePoint { fraction, probability }
    }

    #[test]
    fn default_step_gives_56_steps() {
        assert_eq!(step_count(DEFAULT_STEP_FRACTION).unwrap(), 56);
        assert_eq!(step_count(0.25).unwrap(), 4);
        assert_eq!(step_count(0.1).unwrap(), 10);
        assert_eq!(step_count(1.0).unwrap(), 1);
        assert!(step_count(0.0).is_err());
        assert!(step_count(1.5).is_err());
    }

    #[test]
    fn pixel_schedule_matches_integer_arithmetic() {
        // 0.018 = 18/1000, so ⌈k·0.018·T⌉ = ⌈18kT / 1000⌉ in exact integers
        for total in [1usize, 7, 64, 4096, 50176] {
            for k in 0..=56 {
                let exact = (18 * k * total).div_ceil(1000).min(total);
                assert_eq!(pixels_after(k, 56, 0.018, total), exact, "k={k} total={total}");
            }
        }
    }

    #[test]
    fn masks_cover_top_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sal = Array2::from_shape_fn((9, 7), |_| (rng.random::<f64>() * 4.0).floor());
        let masks = step_masks(sal.view(), 0.1).unwrap();
        assert_eq!(masks.len(), 11);
        // oracle: stable sort of (−value, row, col)
        let mut cells: Vec<(f64, usize, usize)> = sal.indexed_iter().map(|((r, c), &v)| (-v, r, c)).collect();
        cells.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, mask) in masks.iter().enumerate() {
            let count = pixels_after(k, 10, 0.1, 63);
            for (rank, &(_, r, c)) in cells.iter().enumerate() {
                assert_eq!(mask[[r, c]], rank < count, "step {k} rank {rank}");
            }
        }
    }

    #[test]
    fn deletion_endpoints_equal_direct_predictions() {
        let b = bundle(16);
        let img = noisy_image(16, 1);
        let sal = noisy_image(16, 2).array().index_axis(ndarray::Axis(0), 0).to_owned();
        let blur = BlurSpec::default();
        let curve = deletion_curve(&b, &img, sal.view(), 0, 0.018, blur).unwrap();
        assert_eq!(curve.steps(), 56);
        assert_eq!(curve.points[0].fraction, 0.0);
        assert_eq!(curve.points[56].fraction, 1.0);
        let original = b.predict_from_image(&img).unwrap().probabilities[0];
        let blurred = b
            .predict_from_image(&gaussian_blur(&img, blur).unwrap())
            .unwrap()
            .probabilities[0];
        assert!((curve.points[0].probability - original).abs() < 1e-12);
        assert!((curve.points[56].probability - blurred).abs() < 1e-12);
        assert_eq!(*curve.pixel_counts.last().unwrap(), 256);

        let ins = insertion_curve(&b, &img, sal.view(), 0, 0.018, blur).unwrap();
        assert!((ins.points[0].probability - blurred).abs() < 1e-12);
        assert!((ins.points[56].probability - original).abs() < 1e-12);
    }

    #[test]
    fn insertion_points_restore_exactly_the_top_pixels() {
        let b = bundle(12);
        let img = noisy_image(12, 4);
        let sal = noisy_image(12, 5).array().index_axis(ndarray::Axis(0), 1).to_owned();
        let blur = BlurSpec::default();
        let blurred = gaussian_blur(&img, blur).unwrap();
        let ins = insertion_curve(&b, &img, sal.view(), 1, 0.1, blur).unwrap();
        let mut ranked: Vec<(usize, usize)> = sal.indexed_iter().map(|(p, _)| p).collect();
        ranked.sort_by(|a, b| sal[*b].partial_cmp(&sal[*a]).unwrap().then(a.cmp(b)));
        for (k, point) in ins.points.iter().enumerate() {
            let count = (point.fraction * 144.0 - 1e-9).ceil() as usize;
            let mut frame = blurred.clone();
            for &(r, c) in &ranked[..count] {
                for ch in 0..3 {
                    frame.array_mut()[[ch, r, c]] = img.array()[[ch, r, c]];
                }
            }
            let expect = b.predict_from_image(&frame).unwrap().probabilities[1];
            assert!((point.probability - expect).abs() < 1e-12, "point {k}");
            assert_eq!(ins.pixel_counts[k], count);
        }
    }

    #[test]
    fn constant_saliency_value_irrelevant() {
        let b = bundle(10);
        let img = noisy_image(10, 6);
        let a = Array2::from_elem((10, 10), 0.3);
        let c = Array2::from_elem((10, 10), 42.0);
        let blur = BlurSpec::default();
        assert_eq!(
            deletion_curve(&b, &img, a.view(), 0, 0.05, blur).unwrap().points,
            deletion_curve(&b, &img, c.view(), 0, 0.05, blur).unwrap().points
        );
    }

    #[test]
    fn flat_image_gives_flat_curve() {
        let b = bundle(10);
        let img = Image::new(Array3::from_elem((3, 10, 10), 0.7)).unwrap();
        let sal = noisy_image(10, 7).array().index_axis(ndarray::Axis(0), 0).to_owned();
        let ins = insertion_curve(&b, &img, sal.view(), 0, 0.018, BlurSpec::default()).unwrap();
        let p0 = ins.points[0].probability;
        assert!(ins.points.iter().all(|p| (p.probability - p0).abs() < 1e-12));
        assert!((ins.auc - p0).abs() < 1e-12);
    }

    #[test]
    fn saliency_size_checked() {
        let b = bundle(10);
        let img = noisy_image(10, 8);
        let sal = Array2::zeros((9, 10));
        assert!(deletion_curve(&b, &img, sal.view(), 0, 0.018, BlurSpec::default()).is_err());
    }

    #[test]
    fn auc_fixtures() {
        assert!((curve_auc(&[pt(0.0, 0.3), pt(0.4, 0.3), pt(1.0, 0.3)]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(curve_auc(&[pt(0.0, 0.0), pt(1.0, 1.0)]).unwrap(), 0.5);
        let three = curve_auc(&[pt(0.0, 0.2), pt(0.5, 0.8), pt(1.0, 0.4)]).unwrap();
        assert!((three - 0.55).abs() < 1e-15);
        assert!(curve_auc(&[pt(0.0, 0.2), pt(0.6, 0.8), pt(0.5, 0.4)]).is_err());
        assert!(curve_auc(&[pt(0.0, 0.2)]).is_err());
    }

    #[test]
    fn compact_score_fixtures() {
        let ones = Array2::ones((8, 8));
        let s = compact_activation_score(ones.view(), ones.view(), SUPPORT_EPSILON).unwrap();
        assert_eq!((s.c, s.p_t, s.p_a, s.xi), (1.0, 64, 64, 1.0));

        let mut dom = Array2::zeros((8, 8));
        for (i, j) in [(1, 1), (2, 5), (6, 0), (7, 7)] {
            dom[[i, j]] = 16.0;
        }
        let s = compact_activation_score(dom.view(), ones.view(), SUPPORT_EPSILON).unwrap();
        assert_eq!((s.c, s.p_a, s.xi), (1.0, 4, 16.0));

        let zero = Array2::zeros((8, 8));
        let s = compact_activation_score(zero.view(), ones.view(), SUPPORT_EPSILON).unwrap();
        assert_eq!((s.xi, s.p_a), (0.0, 0));
        let s = compact_activation_score(ones.view(), zero.view(), SUPPORT_EPSILON).unwrap();
        assert_eq!(s.c, 0.0);

        let mut neg = Array2::<f64>::ones((8, 8));
        neg[[0, 0]] = -1.0;
        assert!(compact_activation_score(neg.view(), ones.view(), SUPPORT_EPSILON).is_err());
    }

    #[test]
    fn global_map_is_relu_of_weighted_channel_mean() {
        let h = FeatureMap::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0, 3.0, 0.0, -3.0, 2.0]).unwrap();
        let s = ShapleyMap {
            values: array![[1.0, -1.0], [0.5, 2.0]],
            class_index: 0,
            score_mode: ScoreMode::Probability,
            iteration: 0,
        };
        assert_eq!(global_activation_map(&s, &h).unwrap(), array![[2.0, 0.0], [0.0, 6.0]]);
    }

    fn kp(x: f64, y: f64, visible: bool) -> Keypoint {
        Keypoint {
            part_id: 0,
            x,
            y,
            visible,
        }
    }

    #[test]
    fn keypoint_fixtures() {
        let zero = Array2::zeros((20, 20));
        let pts = [kp(3.0, 4.0, true), kp(10.5, 2.0, true)];
        let s = keypoint_inclusion(zero.view(), &pts, SUPPORT_EPSILON);
        assert_eq!((s.keypoints_hit, s.active_pixels, s.mean_contribution), (0, 0, 0.0));

        let full = Array2::from_elem((20, 20), 0.5);
        let many: Vec<Keypoint> = (0..15).map(|k| kp(k as f64, 19.0 - k as f64, true)).collect();
        let s = keypoint_inclusion(full.view(), &many, SUPPORT_EPSILON);
        assert_eq!((s.keypoints_hit, s.keypoints_total), (15, 15));

        let mut patch = Array2::zeros((20, 20));
        patch.slice_mut(ndarray::s![5..10, 8..13]).fill(2.0);
        let six = [
            kp(8.0, 5.0, true),
            kp(12.9, 9.9, true),
            kp(13.0, 9.0, true),
            kp(7.9, 6.0, true),
            kp(0.0, 0.0, true),
            kp(19.0, 19.0, true),
        ];
        let s = keypoint_inclusion(patch.view(), &six, SUPPORT_EPSILON);
        assert_eq!((s.keypoints_hit, s.keypoints_total, s.active_pixels), (2, 6, 25));
        assert_eq!(s.mean_contribution, 2.0);

        let odd = [kp(-1.0, 3.0, true), kp(25.0, 3.0, true), kp(9.0, 6.0, false)];
        let s = keypoint_inclusion(patch.view(), &odd, SUPPORT_EPSILON);
        assert_eq!((s.warnings, s.keypoints_total, s.keypoints_hit), (2, 0, 0));
    }

    #[test]
    fn region_saliency_marks_the_square() {
        let r = PartRegion { cx: 5, cy: 3, half: 1 };
        let m = region_saliency(&r, 8, 8);
        assert_eq!(m.sum(), 9.0);
        assert_eq!(m[[3, 5]], 1.0);
        assert_eq!(m[[3, 7]], 0.0);
    }

    proptest! {
        #[test]
        fn raising_epsilon_never_lowers_xi(
            values in proptest::collection::vec(0.0f64..1.0, 16),
            global in proptest::collection::vec(0.01f64..1.0, 16),
            e1 in 0.0f64..0.5,
            bump in 0.0f64..0.5,
        ) {
            let dom = Array2::from_shape_vec((4, 4), values).unwrap();
            let g = Array2::from_shape_vec((4, 4), global).unwrap();
            let lo = compact_activation_score(dom.view(), g.view(), e1).unwrap();
            let hi = compact_activation_score(dom.view(), g.view(), e1 + bump).unwrap();
            prop_assert_eq!(lo.c, hi.c);
            if hi.p_a > 0 {
                prop_assert!(hi.xi >= lo.xi);
            }
        }

        #[test]
        fn pixel_schedule_monotone(step in 0.005f64..1.0, total in 1usize..5000) {
            let steps = step_count(step).unwrap();
            let counts: Vec<usize> = (0..=steps).map(|k| pixels_after(k, steps, step, total)).collect();
            prop_assert_eq!(counts[0], 0);
            prop_assert_eq!(counts[steps], total);
            prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

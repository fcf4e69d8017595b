//! Per-location contribution scores of a feature map.
//!
//! Each location `(i, j)` gets a Gaussian "dip" centred on it; the feature
//! map is multiplied by `1 − G` on every channel and re-scored, and the drop
//! in the class score is that location's contribution:
//! `s[i, j] = p(h) − p(h ⊙ (1 − G_(i,j)))`.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{ModelBundle, ScoreMode};
use crate::tensor::{FeatureMap, GridPos};

/// Default Gaussian scale for partitioning.
pub const DEFAULT_SIGMA: f64 = 0.8;
/// Default number of partitioned maps scored per head batch.
pub const DEFAULT_CHUNK: usize = 256;

/// `n²` Gaussian slices, one centred on each grid location in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernelBank {
    n: usize,
    sigma: f64,
    kernels: Array3<f64>,
    centers: Vec<GridPos>,
}

impl GaussianKernelBank {
    pub fn side(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `(n², n, n)`
    pub fn kernels(&self) -> &Array3<f64> {
        &self.kernels
    }

    pub fn centers(&self) -> &[GridPos] {
        &self.centers
    }

    pub fn slice(&self, k: usize) -> ndarray::ArrayView2<'_, f64> {
        self.kernels.index_axis(Axis(0), k)
    }
}

pub fn build_kernel_bank(n: usize, sigma: f64) -> Result<GaussianKernelBank> {
    ensure!(n >= 1, Validation, "grid side must be at least 1");
    ensure!(
        sigma > 0.0 && sigma.is_finite(),
        Validation,
        "sigma must be positive and finite, got {sigma}"
    );
    let centers: Vec<GridPos> = (0..n * n).map(|k| GridPos::from_flat(k, n)).collect();
    let denom = 2.0 * sigma * sigma;
    let kernels = Array3::from_shape_fn((n * n, n, n), |(k, x, y)| {
        let c = centers[k];
        let dx = x as f64 - c.i as f64;
        let dy = y as f64 - c.j as f64;
        (-(dx * dx + dy * dy) / denom).exp()
    });
    Ok(GaussianKernelBank {
        n,
        sigma,
        kernels,
        centers,
    })
}

/// Reversed kernels `1 − G`: close to 1 except for a dip at each centre.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionBank {
    n: usize,
    sigma: f64,
    masks: Array3<f64>,
}

impl PartitionBank {
    pub fn new(n: usize, sigma: f64) -> Result<Self> {
        Ok(invert_kernels(&build_kernel_bank(n, sigma)?))
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn masks(&self) -> &Array3<f64> {
        &self.masks
    }

    /// `h` with every channel multiplied by slice `k`.
    pub fn apply(&self, h: &FeatureMap, k: usize) -> FeatureMap {
        let mask = self.masks.index_axis(Axis(0), k);
        let mut out = h.array().clone();
        for mut plane in out.outer_iter_mut() {
            plane *= &mask;
        }
        FeatureMap::new(out).expect("same shape as a valid map")
    }
}

pub fn invert_kernels(bank: &GaussianKernelBank) -> PartitionBank {
    PartitionBank {
        n: bank.n,
        sigma: bank.sigma,
        masks: bank.kernels.mapv(|g| 1.0 - g),
    }
}

/// All `n²` partitioned copies of `h`, in centre order.
pub fn partition_features(h: &FeatureMap, pbank: &PartitionBank) -> Result<Vec<FeatureMap>> {
    check_side(h, pbank.n)?;
    Ok((0..pbank.n * pbank.n).map(|k| pbank.apply(h, k)).collect())
}

fn check_side(h: &FeatureMap, n: usize) -> Result<()> {
    ensure!(
        h.side() == n,
        Validation,
        "feature map is {0}x{0} but the kernel bank is {n}x{n}",
        h.side()
    );
    Ok(())
}

/// Contribution of every location to one class score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ShapleyWire", try_from = "ShapleyWire")]
pub struct ShapleyMap {
    pub values: Array2<f64>,
    pub class_index: usize,
    pub score_mode: ScoreMode,
    pub iteration: usize,
}

impl ShapleyMap {
    pub fn side(&self) -> usize {
        self.values.nrows()
    }

    pub fn at(&self, pos: GridPos) -> f64 {
        self.values[[pos.i, pos.j]]
    }
}

/// Flat row-major form used in explanation records.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShapleyWire {
    n: usize,
    class_index: usize,
    score_mode: ScoreMode,
    iteration: usize,
    values: Vec<f64>,
}

impl From<ShapleyMap> for ShapleyWire {
    fn from(m: ShapleyMap) -> Self {
        Self {
            n: m.side(),
            class_index: m.class_index,
            score_mode: m.score_mode,
            iteration: m.iteration,
            values: m.values.iter().copied().collect(),
        }
    }
}

impl TryFrom<ShapleyWire> for ShapleyMap {
    type Error = Error;

    fn try_from(w: ShapleyWire) -> Result<Self> {
        let values = Array2::from_shape_vec((w.n, w.n), w.values)
            .map_err(|e| Error::Validation(format!("shapley values: {e}")))?;
        Ok(Self {
            values,
            class_index: w.class_index,
            score_mode: w.score_mode,
            iteration: w.iteration,
        })
    }
}

/// How location contributions are measured.
#[derive(Debug, Clone, PartialEq)]
pub enum Attribution {
    /// Gaussian partitioning.
    Partition(PartitionBank),
    /// Zero exactly one spatial column.
    Occlusion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapleyOptions {
    pub score_mode: ScoreMode,
    pub chunk_size: usize,
}

impl Default for ShapleyOptions {
    fn default() -> Self {
        Self {
            score_mode: ScoreMode::Probability,
            chunk_size: DEFAULT_CHUNK,
        }
    }
}

impl Attribution {
    pub fn partition(n: usize, sigma: f64) -> Result<Self> {
        Ok(Self::Partition(PartitionBank::new(n, sigma)?))
    }

    fn perturb(&self, h: &FeatureMap, k: usize) -> FeatureMap {
        match self {
            Self::Partition(bank) => bank.apply(h, k),
            Self::Occlusion => {
                let pos = GridPos::from_flat(k, h.side());
                let mut out = h.clone();
                out.array_mut().slice_mut(ndarray::s![.., pos.i, pos.j]).fill(0.0);
                out
            }
        }
    }

    /// Contribution map of `h` for `class_index`.
    pub fn shapley(
        &self,
        bundle: &ModelBundle,
        h: &FeatureMap,
        class_index: usize,
        opts: ShapleyOptions,
    ) -> Result<ShapleyMap> {
        if let Self::Partition(bank) = self {
            check_side(h, bank.n)?;
        }
        contributions(bundle, h, class_index, opts, |k| self.perturb(h, k))
    }
}

fn contributions(
    bundle: &ModelBundle,
    h: &FeatureMap,
    class_index: usize,
    opts: ShapleyOptions,
    perturb: impl Fn(usize) -> FeatureMap,
) -> Result<ShapleyMap> {
    bundle.check_features(h)?;
    ensure!(
        class_index < bundle.class_count,
        Validation,
        "class {class_index} out of range for {} classes",
        bundle.class_count
    );
    ensure!(opts.chunk_size >= 1, Configuration, "chunk size must be positive");
    let n = h.side();
    let base = bundle.predict_from_features(h)?.score(class_index, opts.score_mode);
    let mut values = Vec::with_capacity(n * n);
    let locations: Vec<usize> = (0..n * n).collect();
    // bounded batches keep at most `chunk_size` perturbed copies alive
    for chunk in locations.chunks(opts.chunk_size) {
        let maps: Vec<FeatureMap> = chunk.iter().map(|&k| perturb(k)).collect();
        values.extend(score_batch(bundle, &maps, class_index, opts.score_mode)?);
    }
    let values = Array2::from_shape_vec((n, n), values.into_iter().map(|p| base - p).collect()).expect("n² values");
    Ok(ShapleyMap {
        values,
        class_index,
        score_mode: opts.score_mode,
        iteration: 0,
    })
}

#[cfg(feature = "parallel")]
fn score_batch(bundle: &ModelBundle, maps: &[FeatureMap], class_index: usize, mode: ScoreMode) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    maps.par_iter()
        .map(|m| Ok(bundle.predict_from_features(m)?.score(class_index, mode)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn score_batch(bundle: &ModelBundle, maps: &[FeatureMap], class_index: usize, mode: ScoreMode) -> Result<Vec<f64>> {
    maps.iter()
        .map(|m| Ok(bundle.predict_from_features(m)?.score(class_index, mode)))
        .collect()
}

/// Gaussian-partition contribution map (the default attribution).
pub fn shapley_map(
    bundle: &ModelBundle,
    h: &FeatureMap,
    class_index: usize,
    bank: &PartitionBank,
    score_mode: ScoreMode,
) -> Result<ShapleyMap> {
    let opts = ShapleyOptions {
        score_mode,
        ..Default::default()
    };
    shapley_map_with(bundle, h, class_index, bank, opts)
}

pub fn shapley_map_with(
    bundle: &ModelBundle,
    h: &FeatureMap,
    class_index: usize,
    bank: &PartitionBank,
    opts: ShapleyOptions,
) -> Result<ShapleyMap> {
    check_side(h, bank.n)?;
    contributions(bundle, h, class_index, opts, |k| bank.apply(h, k))
}

//! A hand-built scene small enough to explain interactively: an 8×8 grid of
//! 4-channel features read by a zero-bias GAP-linear head over three classes.

use std::sync::Arc;

use flipside_core::contrastive::ContrastiveMaps;
use flipside_core::counterfactual::{
    build_candidate_pool, generate_counterfactual, replay, CandidatePool, CounterfactualResult, EngineConfig,
    ReferenceEntry, ReferenceSet,
};
use flipside_core::model::{GapLinearHead, ModelBundle, ScoreMode};
use flipside_core::saliency::{build_kernel_bank, Attribution, ShapleyOptions};
use flipside_core::tensor::FeatureMap;
use flipside_core::{Error, Result};
use ndarray::{Array2, Array3};

pub const SIDE: usize = 8;
pub const CHANNELS: usize = 4;
pub const CLASS_NAMES: [&str; 3] = ["decoy", "part", "texture"];
/// Size of the upsampled contrastive maps.
pub const IMAGE_SIDE: usize = 64;

/// Class the scene's sample really belongs to.
pub const TRUE_CLASS: usize = 1;

fn head() -> GapLinearHead {
    let mut w = Array2::zeros((CLASS_NAMES.len(), CHANNELS));
    for k in 0..CLASS_NAMES.len() {
        w[[k, k]] = 1.2;
        w[[k, 3]] = 0.1;
    }
    GapLinearHead::zero_bias(w)
}

pub fn bundle() -> ModelBundle {
    ModelBundle::head_only("demo-gap-linear", Arc::new(head()), (CHANNELS, SIDE, SIDE)).expect("static head is valid")
}

/// Adds an isotropic blob of `amp` centred on `(ci, cj)` to one channel.
fn blob(h: &mut Array3<f64>, channel: usize, (ci, cj): (usize, usize), amp: f64, width: f64) {
    for i in 0..SIDE {
        for j in 0..SIDE {
            let d2 = (i as f64 - ci as f64).powi(2) + (j as f64 - cj as f64).powi(2);
            h[[channel, i, j]] += amp * (-d2 / (2.0 * width * width)).exp();
        }
    }
}

fn background() -> Array3<f64> {
    // deterministic low texture so no column is exactly zero
    Array3::from_shape_fn((CHANNELS, SIDE, SIDE), |(c, i, j)| {
        0.02 * (1.0 + ((c * 7 + i * 3 + j * 5) % 11) as f64 / 11.0)
    })
}

/// The sample to explain: a weak true part outweighed by a strong decoy.
pub fn sample() -> FeatureMap {
    let mut h = background();
    blob(&mut h, 1, (5, 5), 1.0, 1.0);
    blob(&mut h, 0, (2, 2), 1.6, 1.0);
    FeatureMap::new(h).expect("static map is valid")
}

/// Correctly classified maps of the true class with the part in varying places.
pub fn references() -> Vec<ReferenceEntry> {
    [(5, 5), (4, 5), (5, 4), (2, 3), (6, 2), (3, 6)]
        .iter()
        .enumerate()
        .map(|(k, &pos)| {
            let mut h = background();
            blob(&mut h, 1, pos, 2.0, 1.0);
            blob(&mut h, 2, (7 - pos.0, pos.1), 0.3, 1.5);
            ReferenceEntry {
                sample_id: format!("ref/{k}"),
                features: FeatureMap::new(h).expect("static map is valid"),
                label: TRUE_CLASS,
            }
        })
        .collect()
}

/// Gaussian slice centred on `(i, j)`, row-major.
pub fn kernel(sigma: f64, i: usize, j: usize) -> Result<Vec<f64>> {
    if i >= SIDE || j >= SIDE {
        return Err(Error::Validation(format!(
            "centre ({i}, {j}) is off the {SIDE}x{SIDE} grid"
        )));
    }
    let bank = build_kernel_bank(SIDE, sigma)?;
    Ok(bank.slice(i * SIDE + j).iter().copied().collect())
}

/// The scene sample's contribution map for `class`, row-major.
pub fn shapley(sigma: f64, class: usize, mode: ScoreMode) -> Result<Vec<f64>> {
    let bundle = bundle();
    if class >= bundle.class_count {
        return Err(Error::Validation(format!("no class {class}")));
    }
    let attribution = Attribution::partition(SIDE, sigma)?;
    let opts = ShapleyOptions {
        score_mode: mode,
        ..Default::default()
    };
    Ok(attribution
        .shapley(&bundle, &sample(), class, opts)?
        .values
        .into_iter()
        .collect())
}

/// One finished greedy search over the scene, replayable step by step.
pub struct Walk {
    pub bundle: ModelBundle,
    pub pool: CandidatePool,
    pub result: CounterfactualResult,
    pub maps: ContrastiveMaps,
}

impl Walk {
    pub fn run(sigma: f64, top_m: usize, max_iters: usize) -> Result<Self> {
        let bundle = bundle();
        let attribution = Attribution::partition(SIDE, sigma)?;
        let refs = ReferenceSet::new(&bundle, references(), TRUE_CLASS)?;
        let opts = ShapleyOptions::default();
        let pool = build_candidate_pool(&bundle, &refs, top_m, &attribution, opts)?;
        let cfg = EngineConfig {
            max_iters,
            ..Default::default()
        };
        let result = generate_counterfactual(&bundle, &sample(), TRUE_CLASS, &pool, &attribution, &cfg)?;
        let maps = ContrastiveMaps::from_result(&result, (IMAGE_SIDE, IMAGE_SIDE))?;
        Ok(Self {
            bundle,
            pool,
            result,
            maps,
        })
    }

    pub fn steps(&self) -> usize {
        self.result.trace.len()
    }

    /// Features after the first `t` replacements (clamped to the trace).
    pub fn features_at(&self, t: usize) -> Result<FeatureMap> {
        let t = t.min(self.steps());
        replay(&self.result.h0, &self.result.trace[..t], &self.pool)
    }

    pub fn probabilities_at(&self, t: usize) -> Result<Vec<f64>> {
        Ok(self.bundle.predict_from_features(&self.features_at(t)?)?.probabilities)
    }
}

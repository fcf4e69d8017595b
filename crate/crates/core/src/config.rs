//! Run configuration shared by every pipeline stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::counterfactual::{EngineConfig, DEFAULT_MAX_ITERS, DEFAULT_REFERENCE_SIZE, DEFAULT_TOP_M};
use crate::error::{ensure, Result};
use crate::evaluation::{DEFAULT_STEP_FRACTION, SUPPORT_EPSILON};
use crate::imaging::BlurSpec;
use crate::model::ScoreMode;
use crate::saliency::{Attribution, DEFAULT_CHUNK, DEFAULT_SIGMA};

/// How per-location contributions are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionKind {
    /// Gaussian partitioning with width `sigma`.
    #[default]
    Partition,
    /// Hard single-cell zeroing.
    Occlusion,
}

impl AttributionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttributionKind::Partition => "partition",
            AttributionKind::Occlusion => "occlusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sigma: f64,
    pub u_size: usize,
    pub max_iters: usize,
    pub top_m: usize,
    pub step_fraction: f64,
    pub sim_weight: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub score_mode: ScoreMode,
    pub attribution: AttributionKind,
    pub chunk_size: usize,
    pub blur: BlurSpec,
    pub epsilon: f64,
    /// Samples processed concurrently by batch commands.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            u_size: DEFAULT_REFERENCE_SIZE,
            max_iters: DEFAULT_MAX_ITERS,
            top_m: DEFAULT_TOP_M,
            step_fraction: DEFAULT_STEP_FRACTION,
            sim_weight: 1.0,
            seed: 7,
            out_dir: PathBuf::from("runs"),
            score_mode: ScoreMode::Probability,
            attribution: AttributionKind::Partition,
            chunk_size: DEFAULT_CHUNK,
            blur: BlurSpec::default(),
            epsilon: SUPPORT_EPSILON,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sigma > 0.0 && self.sigma.is_finite(),
            Configuration,
            "sigma must be positive, got {}",
            self.sigma
        );
        ensure!(self.u_size >= 1, Configuration, "u_size must be at least 1");
        ensure!(self.max_iters >= 1, Configuration, "max_iters must be at least 1");
        ensure!(self.top_m >= 1, Configuration, "top_m must be at least 1");
        ensure!(
            self.step_fraction > 0.0 && self.step_fraction <= 1.0,
            Configuration,
            "step_fraction must lie in (0, 1], got {}",
            self.step_fraction
        );
        ensure!(
            self.sim_weight >= 0.0 && self.sim_weight.is_finite(),
            Configuration,
            "sim_weight must be non-negative"
        );
        ensure!(self.chunk_size >= 1, Configuration, "chunk_size must be at least 1");
        ensure!(self.epsilon >= 0.0, Configuration, "epsilon must be non-negative");
        ensure!(self.workers >= 1, Configuration, "workers must be at least 1");
        self.blur.validate()
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            max_iters: self.max_iters,
            sim_weight: self.sim_weight,
            score_mode: self.score_mode,
            chunk_size: self.chunk_size,
        }
    }

    /// The attribution for an `n × n` feature grid.
    pub fn attribution(&self, n: usize) -> Result<Attribution> {
        match self.attribution {
            AttributionKind::Partition => Attribution::partition(n, self.sigma),
            AttributionKind::Occlusion => Ok(Attribution::Occlusion),
        }
    }

    /// Tag naming everything that shapes a candidate pool.
    pub fn pool_tag(&self) -> String {
        let attribution = match self.attribution {
            AttributionKind::Partition => format!("partition-s{}", self.sigma),
            AttributionKind::Occlusion => "occlusion".to_string(),
        };
        let mode = match self.score_mode {
            ScoreMode::Probability => "prob",
            ScoreMode::Logit => "logit",
        };
        format!("pool-u{}-m{}-{attribution}-{mode}", self.u_size, self.top_m)
    }
}

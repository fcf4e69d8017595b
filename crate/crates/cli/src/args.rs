use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flipside_core::config::{AttributionKind, RunConfig};
use flipside_core::data::CACHE_ENV;
use flipside_core::model::ScoreMode;

#[derive(Debug, Parser)]
#[command(
    name = "flipside",
    version,
    about = "Counterfactual \"why P, rather than Q?\" explanations"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and train the toy model on it.
    TrainToy(TrainToyArgs),
    /// Write the index of misclassified samples of one split.
    Mine(MineArgs),
    /// Explain samples and write records, overlays and curves.
    Explain(ExplainArgs),
    /// Aggregate insertion/deletion, compactness and keypoint metrics.
    Evaluate(EvaluateArgs),
    /// Compare attribution and Top-m variants of the explain pipeline.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Run directory receiving the manifest and checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0.3)]
    pub decoy_rate: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Backbone family.
    #[arg(long, default_value = "toy")]
    pub arch: String,
    /// Dataset root; defaults to the model directory (a toy run).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fine-grained layout of `--data` (cub or stanford_dogs); synthetic when absent.
    #[arg(long)]
    pub layout: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreModeArg {
    Probability,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttributionArg {
    Partition,
    Occlusion,
}

/// Flags mirroring the run configuration; unset flags keep the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration used as the base for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub u_size: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub top_m: Option<usize>,
    #[arg(long)]
    pub step_fraction: Option<f64>,
    #[arg(long)]
    pub sim_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub score_mode: Option<ScoreModeArg>,
    #[arg(long, value_enum)]
    pub attribution: Option<AttributionArg>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl RunArgs {
    pub fn apply(&self, mut c: RunConfig) -> RunConfig {
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.u_size {
            c.u_size = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.top_m {
            c.top_m = v;
        }
        if let Some(v) = self.step_fraction {
            c.step_fraction = v;
        }
        if let Some(v) = self.sim_weight {
            c.sim_weight = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.score_mode {
            c.score_mode = match v {
                ScoreModeArg::Probability => ScoreMode::Probability,
                ScoreModeArg::Logit => ScoreMode::Logit,
            };
        }
        if let Some(v) = self.attribution {
            c.attribution = match v {
                AttributionArg::Partition => AttributionKind::Partition,
                AttributionArg::Occlusion => AttributionKind::Occlusion,
            };
        }
        if let Some(v) = self.chunk_size {
            c.chunk_size = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Index file; defaults to `mined.json` in the model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample id to explain; repeatable.
    #[arg(long)]
    pub sample: Vec<String>,
    /// Mined index whose samples are explained.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Explain at most this many samples from the index.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Skip the on-disk pool cache.
    #[arg(long)]
    pub no_cache: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory of explanation records.
    #[arg(long)]
    pub records: PathBuf,
    /// Report directory; defaults to `eval` inside the records directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides the step fraction recorded in each record.
    #[arg(long)]
    pub step_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub sample: Vec<String>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
    /// Saliency-partition settings to compare (off = single-cell occlusion).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub sp: Vec<Toggle>,
    /// Top-m values to compare.
    #[arg(long, value_delimiter = ',')]
    pub topm: Vec<usize>,
    /// Comparison table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn cache_help() -> String {
    format!("pool cache root is read from {CACHE_ENV}")
}

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use flipside_core::data::SyntheticConfig;
use flipside_core::model::ToyTrainConfig;
use flipside_core::pipeline::{prepare_toy_run, ToyRun};

pub const DATA_SEED: u64 = 7;

pub fn run_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("toy-run-k8-s7")
}

/// The shared trained toy setup: 8 synthetic classes, 100 train and 100 val
/// images each, 20 epochs at seed 7. Trained once per target directory.
pub fn toy_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| {
        prepare_toy_run(
            &run_dir(),
            &SyntheticConfig::default(),
            DATA_SEED,
            &ToyTrainConfig::default(),
        )
        .expect("toy run")
    })
}

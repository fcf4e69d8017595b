#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use flipside_core::data::SyntheticConfig;
use flipside_core::model::ToyTrainConfig;
use flipside_core::pipeline::{prepare_toy_run, ToyRun};

pub const DATA_SEED: u64 = 7;

pub fn run_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-toy-run-k8-s7")
}

/// The default toy setup, trained once per target directory with the same
/// configuration as `flipside train-toy`.
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

pub fn flipside<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_flipside"))
        .args(args)
        .env_remove(flipside_core::data::CACHE_ENV)
        .output()
        .expect("spawn flipside")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-scratch").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use flipside_core::config::{AttributionKind, RunConfig};
use flipside_core::contrastive::upsample_map;
use flipside_core::counterfactual::Status;
use flipside_core::data::{mine_misclassified, open_dataset, Cache, DatasetHandle, Layout, Split, SyntheticConfig};
use flipside_core::evaluation::{
    compact_activation_score, deletion_curve, insertion_curve, keypoint_inclusion, FineGrainedStats,
};
use flipside_core::model::{load_backbone, BackboneDescriptor, ModelBundle, ToyTrainConfig, METADATA_FILE};
use flipside_core::pipeline::{train_toy_run, Explainer};
use flipside_core::record::{sample_stem, ExplanationRecord, MinedIndex, INDEX_SCHEMA_VERSION};
use flipside_core::store::{hash_bytes, write_atomic};
use rayon::prelude::*;

use crate::args::{AblateArgs, EvaluateArgs, ExplainArgs, MineArgs, ModelArgs, RunArgs, Toggle, TrainToyArgs};
use crate::report::{mean, Table};

/// What a finished command reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    CounterfactualFailure,
}

pub fn train_toy(args: &TrainToyArgs) -> Result<Outcome> {
    let data = SyntheticConfig {
        classes: args.classes,
        train_per_class: args.train_per_class,
        val_per_class: args.val_per_class,
        noise_std: args.noise_std,
        decoy_rate: args.decoy_rate,
        ..Default::default()
    };
    let train = ToyTrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        ..Default::default()
    };
    train.validate()?;
    data.validate()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let start = Instant::now();
    let run = train_toy_run(&args.out, &data, args.data_seed, &train)?;
    let meta_bytes = std::fs::read(args.out.join(METADATA_FILE))?;
    println!("model_id: {}", run.metadata.model_id);
    println!("dataset_id: {}", run.dataset.dataset_id);
    println!("validation accuracy: {:.4}", run.metadata.validation_accuracy);
    println!("metadata hash: {}", hash_bytes(&meta_bytes));
    println!(
        "trained in {:.1}s, checkpoint in {}",
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(Outcome::Ok)
}

fn load(model: &ModelArgs) -> Result<(ModelBundle, DatasetHandle)> {
    let desc = if model.arch.eq_ignore_ascii_case("toy") {
        BackboneDescriptor::toy_checkpoint(&model.model)
    } else {
        BackboneDescriptor {
            family: model.arch.clone(),
            checkpoint_path: Some(model.model.clone()),
            input_size: (224, 224),
            preprocess: Default::default(),
            classes: None,
        }
    };
    let bundle = load_backbone(&desc)?;
    let data_path = model.data.as_deref().unwrap_or(&model.model);
    let layout = model.layout.as_deref().map(str::parse::<Layout>).transpose()?;
    let dataset =
        open_dataset(data_path, layout).with_context(|| format!("opening dataset at {}", data_path.display()))?;
    if dataset.class_count() != bundle.class_count {
        bail!(
            "dataset has {} classes but the model has {}",
            dataset.class_count(),
            bundle.class_count
        );
    }
    Ok((bundle, dataset))
}

fn run_config(run: &RunArgs, out_dir: Option<&Path>) -> Result<RunConfig> {
    let base = match &run.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    let mut config = run.apply(base);
    if let Some(dir) = out_dir {
        config.out_dir = dir.to_path_buf();
    }
    config.validate()?;
    Ok(config)
}

pub fn mine(args: &MineArgs) -> Result<Outcome> {
    let (bundle, dataset) = load(&args.model)?;
    let split: Split = args.split.parse()?;
    let samples = mine_misclassified(&bundle, &dataset, split)?;
    let index = MinedIndex {
        schema_version: INDEX_SCHEMA_VERSION,
        model_id: bundle.model_id.clone(),
        dataset_id: dataset.dataset_id.clone(),
        split,
        scanned: dataset.samples(split).len(),
        samples,
    };
    let out = args.out.clone().unwrap_or_else(|| args.model.model.join("mined.json"));
    index.write(&out)?;
    println!(
        "mined {} misclassified of {} samples -> {}",
        index.samples.len(),
        index.scanned,
        out.display()
    );
    Ok(Outcome::Ok)
}

fn sample_ids(sample: &[String], index: Option<&Path>, limit: Option<usize>, model_id: &str) -> Result<Vec<String>> {
    let mut ids = sample.to_vec();
    if let Some(path) = index {
        let index = MinedIndex::read(path)?;
        if index.model_id != model_id {
            bail!(
                "{} was mined with model {}, not {model_id}",
                path.display(),
                index.model_id
            );
        }
        ids.extend(index.samples.into_iter().map(|s| s.sample_id));
    }
    if let Some(n) = limit {
        ids.truncate(n);
    }
    if ids.is_empty() && sample.is_empty() && index.is_none() {
        bail!("name samples with --sample or --index");
    }
    Ok(ids)
}

fn cache_for(out_dir: &Path) -> Cache {
    Cache::from_env(out_dir.join(".cache"))
}

pub fn explain(args: &ExplainArgs) -> Result<Outcome> {
    let (bundle, dataset) = load(&args.model)?;
    let config = run_config(&args.run, Some(&args.out_dir))?;
    let ids = sample_ids(&args.sample, args.index.as_deref(), args.limit, &bundle.model_id)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let cache = (!args.no_cache).then(|| cache_for(&args.out_dir));
    let explainer = Explainer::new(&bundle, &dataset, config.clone(), cache)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .context("building the worker pool")?;
    let results: Vec<_> = pool.install(|| {
        ids.par_iter()
            .map(|id| explainer.explain(id).and_then(|e| explainer.write(&e, &args.out_dir)))
            .collect()
    });

    let mut errors = 0;
    let mut failures = 0;
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(record) => {
                if record.status == Status::Failure {
                    failures += 1;
                }
                println!(
                    "{id}: {:?} after {} iteration(s), {} -> {}, xi {:.3}",
                    record.status, record.iterations, record.class_p.name, record.class_q.name, record.xi.xi
                );
            }
            Err(e) => {
                errors += 1;
                eprintln!("{id}: error: {e}");
            }
        }
    }
    println!(
        "{} explained, {failures} counterfactual failure(s), {errors} error(s) -> {}",
        ids.len() - errors,
        args.out_dir.display()
    );
    if errors > 0 {
        bail!("{errors} sample(s) could not be explained");
    }
    Ok(if failures > 0 {
        Outcome::CounterfactualFailure
    } else {
        Outcome::Ok
    })
}

fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("records directory {} does not exist", dir.display());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

struct EvalRow {
    sample_id: String,
    status: Status,
    iterations: usize,
    insertion_auc: f64,
    deletion_auc: f64,
    steps: usize,
    xi: f64,
    stats: FineGrainedStats,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Outcome> {
    let files = record_files(&args.records)?;
    let (bundle, dataset) = load(&args.model)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.records.join("eval"));
    std::fs::create_dir_all(&out_dir)?;

    let mut rows = Vec::new();
    for path in &files {
        let record = ExplanationRecord::read(path).with_context(|| format!("reading {}", path.display()))?;
        if record.model_id != bundle.model_id {
            bail!("{} was produced by model {}", path.display(), record.model_id);
        }
        let sample = dataset
            .find(&record.sample_id)
            .with_context(|| format!("sample {} is not in the dataset", record.sample_id))?;
        let image = dataset.load_image(sample)?;
        let size = (image.height(), image.width());
        let inv_img = upsample_map(record.maps.inv.to_array()?.view(), size.0, size.1)?;
        let dom = record.maps.dom.to_array()?;
        let dom_img = upsample_map(dom.view(), size.0, size.1)?;
        let cfg = &record.config;
        let step = args.step_fraction.unwrap_or(cfg.step_fraction);
        let class_p = record.class_p.index;
        let ins = insertion_curve(&bundle, &image, inv_img.view(), class_p, step, cfg.blur)?;
        let del = deletion_curve(&bundle, &image, inv_img.view(), class_p, step, cfg.blur)?;
        let xi = compact_activation_score(dom.view(), record.maps.global.to_array()?.view(), cfg.epsilon)?;
        let keypoints = dataset.keypoints(&record.sample_id).unwrap_or(&[]);
        let stats = keypoint_inclusion(dom_img.view(), keypoints, cfg.epsilon);
        let stem = sample_stem(&record.sample_id);
        write_atomic(&out_dir.join(format!("{stem}.insertion.csv")), ins.to_csv().as_bytes())?;
        write_atomic(&out_dir.join(format!("{stem}.deletion.csv")), del.to_csv().as_bytes())?;
        rows.push(EvalRow {
            sample_id: record.sample_id.clone(),
            status: record.status,
            iterations: record.iterations,
            insertion_auc: ins.auc,
            deletion_auc: del.auc,
            steps: ins.steps(),
            xi: xi.xi,
            stats,
        });
    }

    let mut table = Table::new(&[
        "sample_id",
        "status",
        "iterations",
        "steps",
        "insertion_auc",
        "deletion_auc",
        "insertion_x100",
        "deletion_x100",
        "xi",
        "active_pixels",
        "keypoints_hit",
        "keypoints_total",
        "mean_contribution",
    ]);
    for r in &rows {
        table.push(vec![
            r.sample_id.clone(),
            format!("{:?}", r.status).to_lowercase(),
            r.iterations.to_string(),
            r.steps.to_string(),
            format!("{:.6}", r.insertion_auc),
            format!("{:.6}", r.deletion_auc),
            format!("{:.2}", r.insertion_auc * 100.0),
            format!("{:.2}", r.deletion_auc * 100.0),
            format!("{:.6}", r.xi),
            r.stats.active_pixels.to_string(),
            r.stats.keypoints_hit.to_string(),
            r.stats.keypoints_total.to_string(),
            format!("{:.6}", r.stats.mean_contribution),
        ]);
    }
    write_atomic(&out_dir.join("per_sample.csv"), table.to_csv().as_bytes())?;

    let ins: Vec<f64> = rows.iter().map(|r| r.insertion_auc).collect();
    let del: Vec<f64> = rows.iter().map(|r| r.deletion_auc).collect();
    let xi: Vec<f64> = rows.iter().map(|r| r.xi).collect();
    let hits: usize = rows.iter().map(|r| r.stats.keypoints_hit).sum();
    let kps: usize = rows.iter().map(|r| r.stats.keypoints_total).sum();
    let successes = rows.iter().filter(|r| r.status == Status::Success).count();
    let report = format!(
        "samples: {}\n\
         successes: {successes}\n\
         mean_insertion_auc: {:.6}\n\
         mean_deletion_auc: {:.6}\n\
         mean_insertion_auc_x100: {:.2}\n\
         mean_deletion_auc_x100: {:.2}\n\
         mean_xi: {:.6}\n\
         mean_iterations: {:.3}\n\
         keypoints_hit: {hits}\n\
         keypoints_total: {kps}\n\
         mean_active_pixels: {:.2}\n",
        rows.len(),
        mean(&ins),
        mean(&del),
        mean(&ins) * 100.0,
        mean(&del) * 100.0,
        mean(&xi),
        mean(&rows.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()),
        mean(&rows.iter().map(|r| r.stats.active_pixels as f64).collect::<Vec<_>>()),
    );
    write_atomic(&out_dir.join("report.txt"), report.as_bytes())?;
    print!("{report}");
    println!("per-sample metrics -> {}", out_dir.join("per_sample.csv").display());
    Ok(Outcome::Ok)
}

pub fn ablate(args: &AblateArgs) -> Result<Outcome> {
    if args.sp.is_empty() && args.topm.is_empty() {
        bail!("nothing to compare: pass --sp and/or --topm");
    }
    let (bundle, dataset) = load(&args.model)?;
    let base = run_config(&args.run, None)?;
    let ids = sample_ids(&args.sample, args.index.as_deref(), Some(args.limit), &bundle.model_id)?;
    if ids.is_empty() {
        bail!("no samples to explain");
    }
    let sps = if args.sp.is_empty() {
        vec![Toggle::On]
    } else {
        args.sp.clone()
    };
    let topms = if args.topm.is_empty() {
        vec![base.top_m]
    } else {
        args.topm.clone()
    };

    let mut table = Table::new(&[
        "sp",
        "top_m",
        "samples",
        "successes",
        "mean_iterations",
        "ms_per_explanation",
        "mean_active_pixels",
        "mean_contribution",
        "mean_xi",
    ]);
    for &sp in &sps {
        for &m in &topms {
            let config = RunConfig {
                top_m: m,
                attribution: match sp {
                    Toggle::On => AttributionKind::Partition,
                    Toggle::Off => AttributionKind::Occlusion,
                },
                ..base.clone()
            };
            let explainer = Explainer::new(&bundle, &dataset, config.clone(), None)?;
            let start = Instant::now();
            let mut iterations = Vec::new();
            let mut active = Vec::new();
            let mut contribution = Vec::new();
            let mut xi = Vec::new();
            let mut successes = 0;
            for id in &ids {
                let e = explainer.explain(id)?;
                if e.result.status == Status::Success {
                    successes += 1;
                }
                let stats = keypoint_inclusion(e.maps.dom_img.view(), &[], config.epsilon);
                iterations.push(e.result.iterations as f64);
                active.push(stats.active_pixels as f64);
                contribution.push(stats.mean_contribution);
                xi.push(e.xi.xi);
            }
            let ms = start.elapsed().as_secs_f64() * 1e3 / ids.len() as f64;
            table.push(vec![
                match sp {
                    Toggle::On => "on".into(),
                    Toggle::Off => "off".into(),
                },
                m.to_string(),
                ids.len().to_string(),
                successes.to_string(),
                format!("{:.3}", mean(&iterations)),
                format!("{ms:.2}"),
                format!("{:.2}", mean(&active)),
                format!("{:.6}", mean(&contribution)),
                format!("{:.6}", mean(&xi)),
            ]);
        }
    }
    print!("{}", table.to_text());
    if let Some(out) = &args.out {
        write_atomic(out, table.to_csv().as_bytes())?;
        println!("comparison -> {}", out.display());
    }
    Ok(Outcome::Ok)
}

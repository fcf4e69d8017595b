//! End-to-end explanation of one sample, plus toy-run preparation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ndarray::Array2;

use crate::config::RunConfig;
use crate::contrastive::ContrastiveMaps;
use crate::counterfactual::{
    build_candidate_pool, build_reference_set, generate_counterfactual, CandidatePool, CounterfactualResult,
};
use crate::data::{
    generate_synthetic, load_synthetic_manifest, write_synthetic_manifest, Cache, CacheKey, DatasetHandle, Split,
    SyntheticConfig, MANIFEST_FILE,
};
use crate::error::{ensure, Error, Result};
use crate::evaluation::{
    compact_activation_score, deletion_curve, global_activation_map, insertion_curve, keypoint_inclusion, CompactScore,
    CurveResult, FineGrainedStats,
};
use crate::model::toy::{train_toy, METADATA_FILE, WEIGHTS_FILE};
use crate::model::{load_toy_checkpoint, save_toy_checkpoint, ModelBundle, ToyMetadata, ToyTrainConfig};
use crate::record::{
    sample_stem, ClassRef, CurveRef, ExplanationRecord, GridValues, MapsRecord, Timing, SCHEMA_VERSION,
};
use crate::render::{overlay, write_png, COLORMAP};
use crate::saliency::{Attribution, ShapleyOptions};
use crate::store::{write_atomic, FlatArray};
use crate::tensor::Image;

/// Split that supplies reference samples.
pub const REFERENCE_SPLIT: Split = Split::Train;

/// Everything computed for one sample.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub sample_id: String,
    pub image: Image,
    pub result: CounterfactualResult,
    pub maps: ContrastiveMaps,
    pub global: Array2<f64>,
    pub xi: CompactScore,
    pub insertion: CurveResult,
    pub deletion: CurveResult,
    pub fine_grained: Option<FineGrainedStats>,
    pub elapsed: Duration,
}

pub struct Explainer<'a> {
    bundle: &'a ModelBundle,
    dataset: &'a DatasetHandle,
    config: RunConfig,
    attribution: Attribution,
    cache: Option<Cache>,
    pools: Mutex<HashMap<usize, Arc<CandidatePool>>>,
}

impl<'a> Explainer<'a> {
    pub fn new(
        bundle: &'a ModelBundle,
        dataset: &'a DatasetHandle,
        config: RunConfig,
        cache: Option<Cache>,
    ) -> Result<Self> {
        config.validate()?;
        ensure!(
            dataset.class_count() == bundle.class_count,
            Configuration,
            "dataset has {} classes, model has {}",
            dataset.class_count(),
            bundle.class_count
        );
        let attribution = config.attribution(bundle.feature_shape.1)?;
        Ok(Self {
            bundle,
            dataset,
            config,
            attribution,
            cache,
            pools: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn attribution(&self) -> &Attribution {
        &self.attribution
    }

    fn shapley_options(&self) -> ShapleyOptions {
        ShapleyOptions {
            score_mode: self.config.score_mode,
            chunk_size: self.config.chunk_size,
        }
    }

    fn pool_key(&self, class: usize) -> CacheKey {
        CacheKey::new(
            self.bundle.model_id.clone(),
            self.dataset.dataset_id.clone(),
            format!("class/{class}"),
            self.config.pool_tag(),
        )
    }

    /// The candidate pool for `class`, built once and then served from
    /// memory or the on-disk cache.
    pub fn pool(&self, class: usize) -> Result<Arc<CandidatePool>> {
        if let Some(pool) = self.pools.lock().expect("pool lock").get(&class) {
            return Ok(pool.clone());
        }
        let key = self.pool_key(class);
        let cached = match &self.cache {
            Some(cache) => cache.get(&key)?,
            None => None,
        };
        let pool = match cached {
            Some(arr) => CandidatePool::from_array(&arr, self.config.top_m, class)?,
            None => {
                let refs = build_reference_set(self.bundle, self.dataset, REFERENCE_SPLIT, class, self.config.u_size)?;
                let pool = build_candidate_pool(
                    self.bundle,
                    &refs,
                    self.config.top_m,
                    &self.attribution,
                    self.shapley_options(),
                )?;
                if let Some(cache) = &self.cache {
                    cache.put(&key, &pool.to_array())?;
                }
                pool
            }
        };
        let pool = Arc::new(pool);
        self.pools.lock().expect("pool lock").insert(class, pool.clone());
        Ok(pool)
    }

    pub fn explain(&self, sample_id: &str) -> Result<Explanation> {
        let start = Instant::now();
        let sample = self
            .dataset
            .find(sample_id)
            .ok_or_else(|| Error::Data(format!("unknown sample '{sample_id}'")))?;
        let image = self.dataset.load_image(sample)?;
        let h0 = self.bundle.extract_features(&image)?;
        let true_class = sample.label;
        let predicted = self.bundle.predict_from_features(&h0)?.predicted_class;
        let pool = if predicted == true_class {
            Arc::new(CandidatePool::from_candidates(
                Vec::new(),
                self.config.top_m,
                true_class,
            ))
        } else {
            self.pool(true_class)?
        };
        let result = generate_counterfactual(
            self.bundle,
            &h0,
            true_class,
            &pool,
            &self.attribution,
            &self.config.engine(),
        )?;
        self.finish(sample_id, image, result, start)
    }

    /// Maps, scores and curves for a finished counterfactual.
    pub fn finish(
        &self,
        sample_id: &str,
        image: Image,
        result: CounterfactualResult,
        start: Instant,
    ) -> Result<Explanation> {
        let size = (image.height(), image.width());
        let maps = ContrastiveMaps::from_result(&result, size)?;
        let global = global_activation_map(&result.s_star, &result.h_star)?;
        let xi = compact_activation_score(maps.dom.view(), global.view(), self.config.epsilon)?;
        // curves follow the "why P" map and the class the model actually chose
        let class_p = result.original_class;
        let step = self.config.step_fraction;
        let blur = self.config.blur;
        let insertion = insertion_curve(self.bundle, &image, maps.inv_img.view(), class_p, step, blur)?;
        let deletion = deletion_curve(self.bundle, &image, maps.inv_img.view(), class_p, step, blur)?;
        let fine_grained = self
            .dataset
            .keypoints(sample_id)
            .map(|kps| keypoint_inclusion(maps.dom_img.view(), kps, self.config.epsilon));
        Ok(Explanation {
            sample_id: sample_id.to_string(),
            image,
            result,
            maps,
            global,
            xi,
            insertion,
            deletion,
            fine_grained,
            elapsed: start.elapsed(),
        })
    }

    pub fn record(&self, e: &Explanation) -> ExplanationRecord {
        let stem = sample_stem(&e.sample_id);
        let class_ref = |index: usize| ClassRef {
            index,
            name: self.bundle.label_names[index].clone(),
        };
        let curve_ref = |c: &CurveResult| CurveRef {
            kind: c.kind,
            map: "inv".into(),
            class_index: c.class_index,
            file: format!("{stem}.{}.csv", c.kind.name()),
            steps: c.steps(),
            step_fraction: c.step_fraction,
            blur: c.blur,
            auc: c.auc,
            auc_percent: c.auc * 100.0,
        };
        let r = &e.result;
        ExplanationRecord {
            schema_version: SCHEMA_VERSION,
            model_id: self.bundle.model_id.clone(),
            dataset_id: self.dataset.dataset_id.clone(),
            sample_id: e.sample_id.clone(),
            class_p: class_ref(r.original_class),
            class_q: class_ref(r.true_class),
            status: r.status,
            stop_reason: r.stop_reason,
            iterations: r.iterations,
            trace: r.trace.clone(),
            s0: r.s0.clone(),
            s_star: r.s_star.clone(),
            maps: MapsRecord {
                n: r.h0.side(),
                image_height: e.image.height(),
                image_width: e.image.width(),
                raw_inv: GridValues::from_array(&e.maps.raw_inv),
                raw_dom: GridValues::from_array(&e.maps.raw_dom),
                inv: GridValues::from_array(&e.maps.inv),
                dom: GridValues::from_array(&e.maps.dom),
                global: GridValues::from_array(&e.global),
                inv_image_file: format!("{stem}.inv.bin"),
                dom_image_file: format!("{stem}.dom.bin"),
                inv_overlay: format!("{stem}.inv.png"),
                dom_overlay: format!("{stem}.dom.png"),
                colormap: COLORMAP.into(),
            },
            xi: e.xi,
            curves: vec![curve_ref(&e.insertion), curve_ref(&e.deletion)],
            fine_grained: e.fine_grained,
            config: self.config.clone(),
            timing: Timing {
                created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                elapsed_ms: e.elapsed.as_secs_f64() * 1e3,
            },
        }
    }

    /// Writes the record and every file it references into `dir`.
    pub fn write(&self, e: &Explanation, dir: &Path) -> Result<ExplanationRecord> {
        let record = self.record(e);
        let m = &record.maps;
        for (map, file) in [
            (&e.maps.inv_img, &m.inv_image_file),
            (&e.maps.dom_img, &m.dom_image_file),
        ] {
            let arr = FlatArray::new(vec![map.nrows(), map.ncols()], map.iter().copied().collect())?;
            write_atomic(&dir.join(file), &arr.encode())?;
        }
        write_png(&dir.join(&m.inv_overlay), &overlay(&e.image, e.maps.inv_img.view())?)?;
        write_png(&dir.join(&m.dom_overlay), &overlay(&e.image, e.maps.dom_img.view())?)?;
        for (curve, r) in [&e.insertion, &e.deletion].into_iter().zip(&record.curves) {
            write_atomic(&dir.join(&r.file), curve.to_csv().as_bytes())?;
        }
        record.write(&dir.join(format!("{}.json", sample_stem(&e.sample_id))))?;
        Ok(record)
    }
}

/// A synthetic dataset with a toy model trained on it, sharing one directory.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub bundle: ModelBundle,
    pub dataset: DatasetHandle,
    pub metadata: ToyMetadata,
}

/// Writes the synthetic manifest and trains into `dir`, or loads the run if
/// a matching checkpoint is already there.
pub fn prepare_toy_run(dir: &Path, data: &SyntheticConfig, data_seed: u64, train: &ToyTrainConfig) -> Result<ToyRun> {
    train.validate()?;
    data.validate()?;
    let manifest_ok = load_synthetic_manifest(dir)
        .map(|m| &m.config == data && m.seed == data_seed)
        .unwrap_or(false);
    if manifest_ok && dir.join(WEIGHTS_FILE).exists() && dir.join(METADATA_FILE).exists() {
        let dataset = generate_synthetic(data, data_seed)?;
        if let Ok((bundle, metadata)) = load_toy_checkpoint(dir) {
            if &metadata.train_config == train && metadata.dataset_id == dataset.dataset_id {
                return Ok(ToyRun {
                    bundle,
                    dataset,
                    metadata,
                });
            }
        }
    }
    train_toy_run(dir, data, data_seed, train)
}

/// Always trains, overwriting any checkpoint in `dir`.
pub fn train_toy_run(dir: &Path, data: &SyntheticConfig, data_seed: u64, train: &ToyTrainConfig) -> Result<ToyRun> {
    train.validate()?;
    write_synthetic_manifest(dir, data, data_seed)?;
    let dataset = generate_synthetic(data, data_seed)?;
    let (bundle, net, metadata) = train_toy(&dataset, train)?;
    save_toy_checkpoint(dir, &net, &metadata)?;
    Ok(ToyRun {
        bundle,
        dataset,
        metadata,
    })
}

/// Loads a run directory holding a manifest and a checkpoint.
pub fn open_toy_run(dir: &Path) -> Result<ToyRun> {
    ensure!(
        dir.join(MANIFEST_FILE).exists(),
        Data,
        "{} has no {MANIFEST_FILE}",
        dir.display()
    );
    let manifest = load_synthetic_manifest(dir)?;
    let dataset = generate_synthetic(&manifest.config, manifest.seed)?;
    let (bundle, metadata) = load_toy_checkpoint(dir)?;
    Ok(ToyRun {
        bundle,
        dataset,
        metadata,
    })
}

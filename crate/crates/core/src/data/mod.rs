//! Datasets, misclassification mining and the on-disk cache.

mod cache;
mod fine_grained;
mod synthetic;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::tensor::Image;

pub use cache::{Cache, CacheKey, CACHE_ENV};
pub use fine_grained::{load_fine_grained, Layout};
pub use synthetic::{
    generate_synthetic, load_synthetic_manifest, placement, write_synthetic_manifest, PartRegion, SyntheticConfig,
    SyntheticManifest, MANIFEST_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "test" => Ok(Split::Val),
            other => Err(Error::Configuration(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    /// Index into the handle's in-memory image store.
    Memory(usize),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub source: SampleSource,
    pub label: usize,
}

/// A part annotation in image pixel coordinates (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub part_id: usize,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub dataset_id: String,
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub parts: HashMap<String, Vec<Keypoint>>,
    images: Arc<Vec<image::RgbImage>>,
}

impl DatasetHandle {
    pub(crate) fn new(
        dataset_id: String,
        class_names: Vec<String>,
        train: Vec<Sample>,
        val: Vec<Sample>,
        parts: HashMap<String, Vec<Keypoint>>,
        images: Vec<image::RgbImage>,
    ) -> Self {
        Self {
            dataset_id,
            class_names,
            train,
            val,
            parts,
            images: Arc::new(images),
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn find(&self, sample_id: &str) -> Option<&Sample> {
        self.train.iter().chain(self.val.iter()).find(|s| s.id == sample_id)
    }

    pub fn keypoints(&self, sample_id: &str) -> Option<&[Keypoint]> {
        self.parts.get(sample_id).map(Vec::as_slice)
    }

    pub fn load_image(&self, sample: &Sample) -> Result<Image> {
        match &sample.source {
            SampleSource::Memory(k) => {
                let img = self
                    .images
                    .get(*k)
                    .ok_or_else(|| Error::Data(format!("sample {} points past the image store", sample.id)))?;
                Ok(Image::from_dynamic(&image::DynamicImage::ImageRgb8(img.clone())))
            }
            SampleSource::File(path) => {
                let img = image::open(path)?;
                Ok(Image::from_dynamic(&img))
            }
        }
    }

    /// Raw RGB bytes of an in-memory sample.
    pub fn image_bytes(&self, sample: &Sample) -> Option<&[u8]> {
        match sample.source {
            SampleSource::Memory(k) => self.images.get(k).map(|img| img.as_raw().as_slice()),
            SampleSource::File(_) => None,
        }
    }
}

/// Opens either a synthetic run directory (with a manifest) or a
/// fine-grained dataset root.
pub fn open_dataset(path: &Path, layout: Option<Layout>) -> Result<DatasetHandle> {
    match layout {
        Some(layout) => load_fine_grained(path, layout),
        None => {
            let manifest = load_synthetic_manifest(path)?;
            generate_synthetic(&manifest.config, manifest.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassifiedSample {
    pub sample_id: String,
    pub true_class: usize,
    pub predicted_class: usize,
    pub confidence: f64,
}

/// Every sample of `split` whose prediction differs from its label, in
/// dataset order.
pub fn mine_misclassified(
    bundle: &ModelBundle,
    handle: &DatasetHandle,
    split: Split,
) -> Result<Vec<MisclassifiedSample>> {
    let mut out = Vec::new();
    for sample in handle.samples(split) {
        let scores = bundle.predict_from_image(&handle.load_image(sample)?)?;
        if scores.predicted_class != sample.label {
            out.push(MisclassifiedSample {
                sample_id: sample.id.clone(),
                true_class: sample.label,
                predicted_class: scores.predicted_class,
                confidence: scores.probabilities[scores.predicted_class],
            });
        }
    }
    Ok(out)
}

/// Row-major `classes × classes` confusion counts (`[true][predicted]`).
pub fn confusion_matrix(bundle: &ModelBundle, handle: &DatasetHandle, split: Split) -> Result<Vec<Vec<usize>>> {
    let k = handle.class_count();
    let mut m = vec![vec![0usize; k]; k];
    for sample in handle.samples(split) {
        let p = bundle.predict_from_image(&handle.load_image(sample)?)?;
        m[sample.label][p.predicted_class] += 1;
    }
    Ok(m)
}

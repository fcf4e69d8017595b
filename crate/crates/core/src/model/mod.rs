//! Classifiers split into a feature extractor and a head over the
//! last-conv feature map.

mod arch;
mod descriptor;
pub(crate) mod toy;

use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imaging::resize_image;
use crate::tensor::{argmax, softmax, FeatureMap, Image};

pub use arch::Architecture;
pub use descriptor::{load_backbone, BackboneDescriptor};
pub use toy::{
    load_toy_checkpoint, save_toy_checkpoint, train_toy_model, ToyArchitecture, ToyMetadata, ToyNet, ToyTrainConfig,
    METADATA_FILE, WEIGHTS_FILE,
};

/// Maps a preprocessed image to the last-conv feature map.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, input: &Array3<f64>) -> Result<FeatureMap>;
}

/// Maps a feature map to raw class logits.
pub trait ClassifierHead: Send + Sync {
    fn class_count(&self) -> usize;

    fn logits(&self, h: &FeatureMap) -> Result<Vec<f64>>;
}

/// Which number stands for "the class score" when probing the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl ClassScores {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = softmax(&logits);
        let predicted_class = argmax(&logits);
        Self {
            logits,
            probabilities,
            predicted_class,
        }
    }

    pub fn score(&self, class_index: usize, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Probability => self.probabilities[class_index],
            ScoreMode::Logit => self.logits[class_index],
        }
    }
}

/// Per-channel normalisation applied before the extractor, with an optional
/// bilinear resize to the bundle's input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    #[serde(default)]
    pub resize: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.25; 3],
            resize: false,
        }
    }
}

impl Preprocess {
    pub fn apply(&self, image: &Image, input_size: (usize, usize)) -> Result<Array3<f64>> {
        let (h, w) = input_size;
        let resized;
        let image = if self.resize && (image.height(), image.width()) != (h, w) {
            resized = resize_image(image, h, w);
            &resized
        } else {
            image
        };
        ensure!(
            (image.height(), image.width()) == (h, w),
            Validation,
            "image is {}x{}, model expects {h}x{w}",
            image.height(),
            image.width()
        );
        ensure!(
            image.channels() == 3,
            Validation,
            "expected 3 channels, got {}",
            image.channels()
        );
        let mut out = image.array().clone();
        for (c, mut plane) in out.outer_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub validation_accuracy: Option<f64>,
    pub weights_hash: Option<String>,
    pub seed: Option<u64>,
    pub architecture_hash: Option<String>,
}

/// An immutable classifier split at the last convolutional layer.
#[derive(Clone)]
pub struct ModelBundle {
    pub model_id: String,
    pub class_count: usize,
    pub input_size: (usize, usize),
    pub feature_shape: (usize, usize, usize),
    pub label_names: Vec<String>,
    pub preprocess: Preprocess,
    pub metadata: BundleMetadata,
    extractor: Arc<dyn FeatureExtractor>,
    head: Arc<dyn ClassifierHead>,
}

impl std::fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBundle")
            .field("model_id", &self.model_id)
            .field("class_count", &self.class_count)
            .field("input_size", &self.input_size)
            .field("feature_shape", &self.feature_shape)
            .finish_non_exhaustive()
    }
}

struct MissingExtractor;

impl FeatureExtractor for MissingExtractor {
    fn extract(&self, _input: &Array3<f64>) -> Result<FeatureMap> {
        Err(Error::Configuration(
            "this bundle only carries a head; images cannot be encoded".into(),
        ))
    }
}

impl ModelBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model_id: impl Into<String>,
        extractor: Arc<dyn FeatureExtractor>,
        head: Arc<dyn ClassifierHead>,
        input_size: (usize, usize),
        feature_shape: (usize, usize, usize),
        label_names: Vec<String>,
        preprocess: Preprocess,
        metadata: BundleMetadata,
    ) -> Result<Self> {
        let class_count = head.class_count();
        ensure!(class_count >= 1, Configuration, "head must expose at least one class");
        ensure!(
            label_names.len() == class_count,
            Configuration,
            "{} label names for {class_count} classes",
            label_names.len()
        );
        ensure!(
            feature_shape.1 == feature_shape.2,
            Configuration,
            "feature maps must be square, got {feature_shape:?}"
        );
        Ok(Self {
            model_id: model_id.into(),
            class_count,
            input_size,
            feature_shape,
            label_names,
            preprocess,
            metadata,
            extractor,
            head,
        })
    }

    /// A bundle without an image encoder, for probing hand-built heads.
    pub fn head_only(
        model_id: impl Into<String>,
        head: Arc<dyn ClassifierHead>,
        feature_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let names = (0..head.class_count()).map(|k| format!("class_{k}")).collect();
        Self::new(
            model_id,
            Arc::new(MissingExtractor),
            head,
            (0, 0),
            feature_shape,
            names,
            Preprocess::default(),
            BundleMetadata::default(),
        )
    }

    pub fn head(&self) -> &dyn ClassifierHead {
        self.head.as_ref()
    }

    pub fn check_features(&self, h: &FeatureMap) -> Result<()> {
        ensure!(
            h.shape() == self.feature_shape,
            Validation,
            "feature map shape {:?} does not match model feature shape {:?}",
            h.shape(),
            self.feature_shape
        );
        Ok(())
    }

    pub fn extract_features(&self, image: &Image) -> Result<FeatureMap> {
        let input = self.preprocess.apply(image, self.input_size)?;
        let h = self.extractor.extract(&input)?;
        self.check_features(&h)?;
        Ok(h)
    }

    pub fn logits_from_features(&self, h: &FeatureMap) -> Result<Vec<f64>> {
        self.check_features(h)?;
        self.head.logits(h)
    }

    pub fn predict_from_features(&self, h: &FeatureMap) -> Result<ClassScores> {
        Ok(ClassScores::from_logits(self.logits_from_features(h)?))
    }

    pub fn predict_from_image(&self, image: &Image) -> Result<ClassScores> {
        let h = self.extract_features(image)?;
        self.predict_from_features(&h)
    }

    /// Order-preserving batch prediction.
    pub fn predict_batch(&self, images: &[Image]) -> Result<Vec<ClassScores>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            images.par_iter().map(|x| self.predict_from_image(x)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            images.iter().map(|x| self.predict_from_image(x)).collect()
        }
    }
}

/// Global average pooling followed by one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GapLinearHead {
    /// `classes × channels`
    pub weights: ndarray::Array2<f64>,
    pub bias: ndarray::Array1<f64>,
}

impl GapLinearHead {
    pub fn new(weights: ndarray::Array2<f64>, bias: ndarray::Array1<f64>) -> Result<Self> {
        ensure!(
            weights.nrows() == bias.len(),
            Configuration,
            "{} weight rows but {} biases",
            weights.nrows(),
            bias.len()
        );
        Ok(Self { weights, bias })
    }

    pub fn zero_bias(weights: ndarray::Array2<f64>) -> Self {
        let bias = ndarray::Array1::zeros(weights.nrows());
        Self { weights, bias }
    }

    pub fn pooled(h: &FeatureMap) -> ndarray::Array1<f64> {
        let (c, n, _) = h.shape();
        let area = (n * n) as f64;
        let mut out = ndarray::Array1::zeros(c);
        for (k, plane) in h.array().outer_iter().enumerate() {
            out[k] = plane.sum() / area;
        }
        out
    }
}

impl ClassifierHead for GapLinearHead {
    fn class_count(&self) -> usize {
        self.weights.nrows()
    }

    fn logits(&self, h: &FeatureMap) -> Result<Vec<f64>> {
        ensure!(
            h.channels() == self.weights.ncols(),
            Validation,
            "head expects {} channels, got {}",
            self.weights.ncols(),
            h.channels()
        );
        let pooled = Self::pooled(h);
        Ok((self.weights.dot(&pooled) + &self.bias).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ModelBundle {
        let w = ndarray::Array2::from_shape_fn((3, 2), |(k, c)| (k as f64 - 1.0) * (c as f64 + 0.5));
        ModelBundle::head_only("t", Arc::new(GapLinearHead::zero_bias(w)), (2, 4, 4)).unwrap()
    }

    #[test]
    fn probabilities_normalised() {
        let b = bundle();
        let h = FeatureMap::new(Array3::from_shape_fn((2, 4, 4), |(c, i, j)| {
            (c + 2 * i + j) as f64 * 0.3
        }))
        .unwrap();
        let scores = b.predict_from_features(&h).unwrap();
        assert!((scores.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(scores, b.predict_from_features(&h.clone()).unwrap());
    }

    #[test]
    fn shape_mismatch_is_validation_error() {
        let b = bundle();
        let h = FeatureMap::zeros(2, 5);
        assert!(matches!(b.predict_from_features(&h), Err(Error::Validation(_))));
    }

    #[test]
    fn head_only_bundle_cannot_encode_images() {
        let b = bundle();
        let img = Image::new(Array3::zeros((3, 4, 4))).unwrap();
        assert!(b.predict_from_image(&img).is_err());
    }

    #[test]
    fn ties_resolve_to_lowest_class() {
        let s = ClassScores::from_logits(vec![0.5, 2.0, 2.0]);
        assert_eq!(s.predicted_class, 1);
    }
}

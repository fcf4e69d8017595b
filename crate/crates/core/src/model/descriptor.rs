use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::toy::{load_toy_checkpoint, ToyArchitecture, ToyNet};
use super::{BundleMetadata, ModelBundle, Preprocess};
use crate::error::{ensure, Error, Result};

/// Structured backbone config: `{family, checkpoint_path, input_size, preprocess}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneDescriptor {
    pub family: String,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    pub input_size: (usize, usize),
    #[serde(default)]
    pub preprocess: Preprocess,
    /// Class count for an untrained toy network; ignored when a checkpoint is given.
    #[serde(default)]
    pub classes: Option<usize>,
}

impl BackboneDescriptor {
    pub fn toy_checkpoint(path: impl Into<PathBuf>) -> Self {
        Self {
            family: "toy".into(),
            checkpoint_path: Some(path.into()),
            input_size: (64, 64),
            preprocess: Preprocess::default(),
            classes: None,
        }
    }

    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        Architecture::parse(&self.family)?.feature_shape(self.input_size)
    }
}

/// Builds a bundle from a descriptor.
///
/// `toy` loads a checkpoint directory, or builds a freshly initialised
/// network when no checkpoint is named. Other families are recognised for
/// shape tracing but need weights this crate cannot execute.
pub fn load_backbone(desc: &BackboneDescriptor) -> Result<ModelBundle> {
    let arch = Architecture::parse(&desc.family)?;
    match arch {
        Architecture::Toy => match &desc.checkpoint_path {
            Some(path) => {
                if !path.exists() {
                    return Err(missing(path));
                }
                let (bundle, _) = load_toy_checkpoint(path)?;
                ensure!(
                    bundle.input_size == desc.input_size,
                    Configuration,
                    "checkpoint input size {:?} differs from descriptor {:?}",
                    bundle.input_size,
                    desc.input_size
                );
                Ok(bundle)
            }
            None => {
                let classes = desc
                    .classes
                    .ok_or_else(|| Error::Configuration("an untrained toy backbone needs `classes`".into()))?;
                ensure!(
                    desc.input_size.0 == desc.input_size.1 && desc.input_size.0.is_multiple_of(8),
                    Configuration,
                    "toy backbone needs a square input divisible by 8, got {:?}",
                    desc.input_size
                );
                let mut toy = ToyArchitecture::new(classes);
                toy.input_size = desc.input_size.0;
                let names = (0..classes).map(|k| format!("class_{k}")).collect();
                ToyNet::init(toy, 0).into_bundle(
                    "toy-untrained",
                    names,
                    desc.preprocess.clone(),
                    BundleMetadata::default(),
                )
            }
        },
        _ => {
            let shape = arch.feature_shape(desc.input_size)?;
            let path = desc
                .checkpoint_path
                .as_ref()
                .ok_or_else(|| Error::Configuration(format!("{} needs a checkpoint_path", desc.family)))?;
            if !path.exists() {
                return Err(missing(path));
            }
            Err(Error::Configuration(format!(
                "{} (feature shape {shape:?}) has no weight runtime in this build",
                desc.family
            )))
        }
    }
}

fn missing(path: &std::path::Path) -> Error {
    Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint missing"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(family: &str, size: usize) -> BackboneDescriptor {
        BackboneDescriptor {
            family: family.into(),
            checkpoint_path: None,
            input_size: (size, size),
            preprocess: Preprocess::default(),
            classes: Some(4),
        }
    }

    #[test]
    fn untrained_toy_records_feature_shape() {
        let bundle = load_backbone(&desc("toy", 64)).unwrap();
        assert_eq!(bundle.feature_shape, (32, 8, 8));
    }

    #[test]
    fn unknown_family_is_configuration_error() {
        assert!(matches!(
            load_backbone(&desc("unknown-net", 64)),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let mut d = desc("toy", 64);
        d.checkpoint_path = Some("/nonexistent/flipside/ckpt".into());
        assert!(matches!(load_backbone(&d), Err(Error::Io { .. })));
        let mut d = desc("resnet50", 224);
        d.checkpoint_path = Some("/nonexistent/flipside/r50.bin".into());
        assert!(matches!(load_backbone(&d), Err(Error::Io { .. })));
    }

    #[test]
    fn residual_family_shape() {
        assert_eq!(desc("resnet-50", 224).feature_shape().unwrap(), (2048, 7, 7));
    }
}

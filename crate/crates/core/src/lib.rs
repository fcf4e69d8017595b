//! Contrastive counterfactual explanations for misclassified images.
//!
//! A misclassified sample's last-conv feature map is edited one spatial
//! column at a time, swapping in columns mined from correctly classified
//! references of the true class, until the prediction flips. The
//! before/after difference, weighted by per-location contribution scores,
//! yields an *invariant* map (why the wrong class) and a *dominant* map (why
//! the right one).

pub mod config;
pub mod contrastive;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod model;
pub mod pipeline;
pub mod record;
pub mod render;
pub mod saliency;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, GridPos, Image};

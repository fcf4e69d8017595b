//! Machine-readable explanation records and mined-sample indexes.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::counterfactual::{ReplacementStep, Status, StopReason};
use crate::data::{MisclassifiedSample, Split};
use crate::error::{ensure, Error, Result};
use crate::evaluation::{CompactScore, CurveKind, FineGrainedStats};
use crate::imaging::BlurSpec;
use crate::saliency::ShapleyMap;
use crate::store::{read_file, write_atomic};

pub const SCHEMA_VERSION: u32 = 1;
pub const INDEX_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRef {
    pub index: usize,
    pub name: String,
}

/// A row-major 2-d grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridValues {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl GridValues {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            values: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.values.clone())
            .map_err(|e| Error::Validation(format!("grid values: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsRecord {
    pub n: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub raw_inv: GridValues,
    pub raw_dom: GridValues,
    pub inv: GridValues,
    pub dom: GridValues,
    /// Reference map for the contribution ratio of the compact score.
    pub global: GridValues,
    /// Image-resolution maps as flat arrays, relative to the record.
    pub inv_image_file: String,
    pub dom_image_file: String,
    pub inv_overlay: String,
    pub dom_overlay: String,
    pub colormap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRef {
    pub kind: CurveKind,
    /// Which contrastive map ordered the pixels.
    pub map: String,
    pub class_index: usize,
    pub file: String,
    pub steps: usize,
    pub step_fraction: f64,
    pub blur: BlurSpec,
    pub auc: f64,
    pub auc_percent: f64,
}

/// Fields that legitimately differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub created_unix: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationRecord {
    pub schema_version: u32,
    pub model_id: String,
    pub dataset_id: String,
    pub sample_id: String,
    /// The originally predicted class.
    pub class_p: ClassRef,
    /// The true class.
    pub class_q: ClassRef,
    pub status: Status,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub trace: Vec<ReplacementStep>,
    pub s0: ShapleyMap,
    pub s_star: ShapleyMap,
    pub maps: MapsRecord,
    pub xi: CompactScore,
    pub curves: Vec<CurveRef>,
    pub fine_grained: Option<FineGrainedStats>,
    pub config: RunConfig,
    pub timing: Timing,
}

fn grid_ok(name: &str, g: &GridValues, rows: usize, cols: usize, non_negative: bool) -> Result<()> {
    ensure!(
        g.rows == rows && g.cols == cols && g.values.len() == rows * cols,
        Validation,
        "{name} should be {rows}×{cols} with {} values",
        rows * cols
    );
    ensure!(
        g.values.iter().all(|v| v.is_finite() && (!non_negative || *v >= 0.0)),
        Validation,
        "{name} has invalid entries"
    );
    Ok(())
}

impl ExplanationRecord {
    /// Structural and semantic checks against the current schema.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            Validation,
            "schema version {} is not {SCHEMA_VERSION}",
            self.schema_version
        );
        ensure!(!self.sample_id.is_empty(), Validation, "empty sample id");
        ensure!(
            self.iterations == self.trace.len(),
            Validation,
            "iterations {} but {} trace steps",
            self.iterations,
            self.trace.len()
        );
        ensure!(
            self.iterations <= self.config.max_iters,
            Validation,
            "iterations exceed max_iters"
        );
        let final_class = match self.trace.last() {
            Some(step) => step.scores_after.predicted_class,
            None => self.class_p.index,
        };
        ensure!(
            (self.status == Status::Success) == (final_class == self.class_q.index),
            Validation,
            "status {:?} contradicts final class {final_class}",
            self.status
        );
        for (t, step) in self.trace.iter().enumerate() {
            ensure!(step.t == t, Validation, "trace step {t} is numbered {}", step.t);
            ensure!(
                (-1.0..=1.0).contains(&step.l_sim) && step.l_cls <= 0.0,
                Validation,
                "trace step {t} has out-of-range losses"
            );
            let total = self.config.sim_weight * step.l_sim + step.l_cls;
            ensure!(
                (step.l_tot - total).abs() <= 1e-9 * (1.0 + total.abs()),
                Validation,
                "trace step {t}: l_tot is not the weighted sum"
            );
        }

        let m = &self.maps;
        let n = m.n;
        ensure!(
            self.s0.side() == n && self.s_star.side() == n,
            Validation,
            "shapley maps are not {n}×{n}"
        );
        ensure!(
            self.s0.class_index == self.class_p.index && self.s_star.class_index == self.class_q.index,
            Validation,
            "shapley maps reference the wrong classes"
        );
        grid_ok("raw_inv", &m.raw_inv, n, n, false)?;
        grid_ok("raw_dom", &m.raw_dom, n, n, false)?;
        grid_ok("inv", &m.inv, n, n, true)?;
        grid_ok("dom", &m.dom, n, n, true)?;
        grid_ok("global", &m.global, n, n, true)?;
        ensure!(
            m.image_height >= n && m.image_width >= n,
            Validation,
            "image resolution is below the feature grid"
        );
        for f in [&m.inv_image_file, &m.dom_image_file, &m.inv_overlay, &m.dom_overlay] {
            ensure!(!f.is_empty(), Validation, "missing map file reference");
        }

        ensure!(
            self.xi.xi >= 0.0 && self.xi.p_t == n * n && self.xi.p_a <= n * n,
            Validation,
            "compact score is inconsistent with the grid"
        );
        ensure!(self.curves.len() == 2, Validation, "expected two curves");
        for c in &self.curves {
            ensure!(
                (0.0..=1.0).contains(&c.auc) && !c.file.is_empty() && c.steps >= 1,
                Validation,
                "curve {:?} is malformed",
                c.kind
            );
        }
        if let Some(fg) = &self.fine_grained {
            ensure!(
                fg.keypoints_hit <= fg.keypoints_total,
                Validation,
                "more keypoints hit than present"
            );
        }
        self.config.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: Self = serde_json::from_str(text)?;
        record.validate()?;
        Ok(record)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// Misclassified samples of one split, as written by the miner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinedIndex {
    pub schema_version: u32,
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub scanned: usize,
    pub samples: Vec<MisclassifiedSample>,
}

impl MinedIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let index: Self = serde_json::from_slice(&read_file(path)?)?;
        ensure!(
            index.schema_version == INDEX_SCHEMA_VERSION,
            Validation,
            "index schema version {} is not {INDEX_SCHEMA_VERSION}",
            index.schema_version
        );
        Ok(index)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// File-name stem for a sample id such as `val/c03/0042`.
pub fn sample_stem(sample_id: &str) -> String {
    sample_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_flat() {
        assert_eq!(sample_stem("val/c03/0042"), "val_c03_0042");
        assert_eq!(sample_stem("001.Black_footed/x.jpg"), "001.Black_footed_x.jpg");
    }

    #[test]
    fn grid_roundtrip() {
        let a = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(GridValues::from_array(&a).to_array().unwrap(), a);
        let bad = GridValues {
            rows: 2,
            cols: 2,
            values: vec![1.0],
        };
        assert!(bad.to_array().is_err());
    }
}

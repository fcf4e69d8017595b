//! Invariant ("why P") and dominant ("why Q") maps from a counterfactual.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::counterfactual::CounterfactualResult;
use crate::error::{ensure, Result};
use crate::imaging::resize_bilinear;
use crate::saliency::ShapleyMap;
use crate::tensor::FeatureMap;

/// `D[i,j] = Σ_c ReLU(from[c,i,j] − to[c,i,j])`.
pub fn difference_field(from: &FeatureMap, to: &FeatureMap) -> Result<Array2<f64>> {
    ensure!(
        from.shape() == to.shape(),
        Validation,
        "feature maps differ in shape: {:?} vs {:?}",
        from.shape(),
        to.shape()
    );
    let n = from.side();
    let mut d = Array2::zeros((n, n));
    for (a, b) in from.array().outer_iter().zip(to.array().outer_iter()) {
        Zip::from(&mut d)
            .and(&a)
            .and(&b)
            .for_each(|acc, &x, &y| *acc += (x - y).max(0.0));
    }
    Ok(d)
}

/// Divides by the total; an all-zero field stays zero.
pub fn normalize_field(d: &Array2<f64>) -> Array2<f64> {
    let total = d.sum();
    if total > 0.0 {
        d / total
    } else {
        Array2::zeros(d.raw_dim())
    }
}

fn weighted(s: &ShapleyMap, from: &FeatureMap, to: &FeatureMap) -> Result<Array2<f64>> {
    let n = normalize_field(&difference_field(from, to)?);
    ensure!(
        s.values.dim() == n.dim(),
        Validation,
        "shapley map is {:?}, feature grid is {:?}",
        s.values.dim(),
        n.dim()
    );
    Ok(&s.values * &n)
}

/// `s0 ⊙ N(h0 − h*)` before clamping.
pub fn raw_invariant_map(s0: &ShapleyMap, h0: &FeatureMap, h_star: &FeatureMap) -> Result<Array2<f64>> {
    weighted(s0, h0, h_star)
}

/// `s* ⊙ N(h* − h0)` before clamping.
pub fn raw_dominant_map(s_star: &ShapleyMap, h_star: &FeatureMap, h0: &FeatureMap) -> Result<Array2<f64>> {
    weighted(s_star, h_star, h0)
}

pub fn relu(map: &Array2<f64>) -> Array2<f64> {
    map.mapv(|v| v.max(0.0))
}

pub fn invariant_map(s0: &ShapleyMap, h0: &FeatureMap, h_star: &FeatureMap) -> Result<Array2<f64>> {
    raw_invariant_map(s0, h0, h_star).map(|m| relu(&m))
}

pub fn dominant_map(s_star: &ShapleyMap, h_star: &FeatureMap, h0: &FeatureMap) -> Result<Array2<f64>> {
    raw_dominant_map(s_star, h_star, h0).map(|m| relu(&m))
}

/// Bilinear upsampling with corner alignment off. The target may not be
/// smaller than the source along either axis.
pub fn upsample_map(map: ArrayView2<'_, f64>, height: usize, width: usize) -> Result<Array2<f64>> {
    let (rows, cols) = map.dim();
    ensure!(rows >= 1 && cols >= 1, Validation, "cannot upsample an empty map");
    ensure!(
        height >= rows && width >= cols,
        Validation,
        "target {height}×{width} is smaller than the {rows}×{cols} source"
    );
    Ok(resize_bilinear(map, height, width))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveMaps {
    pub class_p: usize,
    pub class_q: usize,
    pub raw_inv: Array2<f64>,
    pub raw_dom: Array2<f64>,
    pub inv: Array2<f64>,
    pub dom: Array2<f64>,
    pub inv_img: Array2<f64>,
    pub dom_img: Array2<f64>,
}

impl ContrastiveMaps {
    pub fn compute(
        s0: &ShapleyMap,
        s_star: &ShapleyMap,
        h0: &FeatureMap,
        h_star: &FeatureMap,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let raw_inv = raw_invariant_map(s0, h0, h_star)?;
        let raw_dom = raw_dominant_map(s_star, h_star, h0)?;
        let inv = relu(&raw_inv);
        let dom = relu(&raw_dom);
        let inv_img = upsample_map(inv.view(), image_size.0, image_size.1)?;
        let dom_img = upsample_map(dom.view(), image_size.0, image_size.1)?;
        Ok(Self {
            class_p: s0.class_index,
            class_q: s_star.class_index,
            raw_inv,
            raw_dom,
            inv,
            dom,
            inv_img,
            dom_img,
        })
    }

    pub fn from_result(result: &CounterfactualResult, image_size: (usize, usize)) -> Result<Self> {
        Self::compute(&result.s0, &result.s_star, &result.h0, &result.h_star, image_size)
    }
}

//! wasm-bindgen bindings for the browser demo in `www/`.

pub mod scene;

use flipside_core::model::ScoreMode;
use flipside_core::render::heatmap;
use ndarray::ArrayView2;
use wasm_bindgen::prelude::*;

use scene::{Walk, CHANNELS, CLASS_NAMES, IMAGE_SIDE, SIDE, TRUE_CLASS};

fn js_err(e: flipside_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Turbo-coloured RGBA pixels of a row-major `rows × cols` map, scaled to its max.
pub fn heatmap_pixels(values: &[f64], rows: usize, cols: usize) -> Option<Vec<u8>> {
    let view = ArrayView2::from_shape((rows, cols), values).ok()?;
    let rgb = heatmap(view);
    Some(rgb.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect())
}

#[wasm_bindgen]
pub fn grid_side() -> usize {
    SIDE
}

#[wasm_bindgen]
pub fn image_side() -> usize {
    IMAGE_SIDE
}

#[wasm_bindgen]
pub fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub fn true_class() -> usize {
    TRUE_CLASS
}

/// RGBA heatmap for a canvas `ImageData`.
#[wasm_bindgen]
pub fn heatmap_rgba(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>, JsError> {
    heatmap_pixels(values, rows, cols).ok_or_else(|| JsError::new("values do not fill the grid"))
}

/// Gaussian kernel of the given width centred on `(i, j)`.
#[wasm_bindgen]
pub fn kernel(sigma: f64, i: usize, j: usize) -> Result<Vec<f64>, JsError> {
    scene::kernel(sigma, i, j).map_err(js_err)
}

/// Contribution map of the scene sample for `class`.
#[wasm_bindgen]
pub fn shapley(sigma: f64, class: usize, logit: bool) -> Result<Vec<f64>, JsError> {
    let mode = if logit {
        ScoreMode::Logit
    } else {
        ScoreMode::Probability
    };
    scene::shapley(sigma, class, mode).map_err(js_err)
}

/// A finished counterfactual search that the page steps through.
#[wasm_bindgen]
pub struct Stepper {
    walk: Walk,
}

#[wasm_bindgen]
impl Stepper {
    #[wasm_bindgen(constructor)]
    pub fn new(sigma: f64, top_m: usize, max_iters: usize) -> Result<Stepper, JsError> {
        Walk::run(sigma, top_m, max_iters)
            .map(|walk| Stepper { walk })
            .map_err(js_err)
    }

    pub fn steps(&self) -> usize {
        self.walk.steps()
    }

    pub fn success(&self) -> bool {
        self.walk.result.status == flipside_core::counterfactual::Status::Success
    }

    pub fn pool_size(&self) -> usize {
        self.walk.pool.len()
    }

    /// Class probabilities after `t` replacements.
    pub fn probabilities(&self, t: usize) -> Vec<f64> {
        self.walk.probabilities_at(t).unwrap_or_default()
    }

    /// `[i, j, reference, source_i, source_j]` of step `t` (1-based), empty if none.
    pub fn step(&self, t: usize) -> Vec<usize> {
        match t.checked_sub(1).and_then(|k| self.walk.result.trace.get(k)) {
            Some(s) => vec![s.target.i, s.target.j, s.source.reference, s.source.i, s.source.j],
            None => Vec::new(),
        }
    }

    /// Per-location channel sum after `t` replacements.
    pub fn energy(&self, t: usize) -> Vec<f64> {
        match self.walk.features_at(t) {
            Ok(h) => {
                let a = h.array();
                (0..SIDE * SIDE)
                    .map(|k| (0..CHANNELS).map(|c| a[[c, k / SIDE, k % SIDE]]).sum())
                    .collect()
            }
            Err(_) => Vec::new(),
        }
    }

    /// Upsampled invariant map (regions that drove the wrong class).
    pub fn invariant(&self) -> Vec<f64> {
        self.walk.maps.inv_img.iter().copied().collect()
    }

    /// Upsampled dominant map (regions that establish the true class).
    pub fn dominant(&self) -> Vec<f64> {
        self.walk.maps.dom_img.iter().copied().collect()
    }
}

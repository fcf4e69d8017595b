//! Greedy feature-column replacement until the prediction flips.
//!
//! Every iteration picks the unreplaced location contributing most to the
//! current (wrong) prediction, then overwrites its `C`-vector with the pool
//! candidate that maximises `λ·cos(target, candidate) + log p_a(h')`, where
//! `h'` is the map after the hypothetical write.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetHandle, Split};
use crate::error::{ensure, Error, Result};
use crate::model::{ClassScores, ModelBundle, ScoreMode};
use crate::saliency::{Attribution, ShapleyMap, ShapleyOptions};
use crate::store::FlatArray;
use crate::tensor::{cosine, log_softmax_at, FeatureMap, GridPos};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOP_M: usize = 10;
pub const DEFAULT_REFERENCE_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub sample_id: String,
    pub features: FeatureMap,
    pub label: usize,
}

/// Correctly classified samples of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub entries: Vec<ReferenceEntry>,
    pub target_class: usize,
}

impl ReferenceSet {
    /// Checks that every entry carries `target_class` and is predicted as such.
    pub fn new(bundle: &ModelBundle, entries: Vec<ReferenceEntry>, target_class: usize) -> Result<Self> {
        for e in &entries {
            ensure!(
                e.label == target_class,
                Validation,
                "reference {} has label {}, expected {target_class}",
                e.sample_id,
                e.label
            );
            let predicted = bundle.predict_from_features(&e.features)?.predicted_class;
            ensure!(
                predicted == target_class,
                Validation,
                "reference {} is predicted as {predicted}",
                e.sample_id
            );
        }
        Ok(Self { entries, target_class })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The first `size` samples of class `a` in `split` (dataset order) that the
/// model classifies correctly.
pub fn build_reference_set(
    bundle: &ModelBundle,
    dataset: &DatasetHandle,
    split: Split,
    class: usize,
    size: usize,
) -> Result<ReferenceSet> {
    ensure!(size >= 1, Validation, "reference set size must be at least 1");
    ensure!(
        class < bundle.class_count,
        Validation,
        "class {class} out of range for {} classes",
        bundle.class_count
    );
    let mut entries = Vec::with_capacity(size);
    let mut seen = 0usize;
    for sample in dataset.samples(split).iter().filter(|s| s.label == class) {
        let features = bundle.extract_features(&dataset.load_image(sample)?)?;
        if bundle.predict_from_features(&features)?.predicted_class == class {
            entries.push(ReferenceEntry {
                sample_id: sample.id.clone(),
                features,
                label: class,
            });
            if entries.len() == size {
                break;
            }
        }
        seen += 1;
    }
    if entries.len() < size {
        return Err(Error::Data(format!(
            "class {class} has only {} correctly classified samples (of {} scanned), need {size}",
            entries.len(),
            seen + entries.len()
        )));
    }
    Ok(ReferenceSet {
        entries,
        target_class: class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Index into the reference set.
    pub reference: usize,
    pub pos: GridPos,
    pub shapley: f64,
    pub vector: Vec<f64>,
}

impl Candidate {
    fn key(&self) -> (usize, usize, usize) {
        (self.reference, self.pos.i, self.pos.j)
    }
}

/// Top-`m` locations of every reference, ranked by contribution to the
/// reference class. Built once and reused across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    candidates: Vec<Candidate>,
    top_m: usize,
    target_class: usize,
}

impl CandidatePool {
    pub fn from_candidates(candidates: Vec<Candidate>, top_m: usize, target_class: usize) -> Self {
        Self {
            candidates,
            top_m,
            target_class,
        }
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn top_m(&self) -> usize {
        self.top_m
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn find(&self, reference: usize, pos: GridPos) -> Option<&Candidate> {
        self.candidates
            .iter()
            .find(|c| c.reference == reference && c.pos == pos)
    }

    /// Rows of `[k, i, j, shapley, vector...]`.
    pub fn to_array(&self) -> FlatArray {
        let width = self.candidates.first().map_or(4, |c| 4 + c.vector.len());
        let mut data = Vec::with_capacity(self.len() * width);
        for c in &self.candidates {
            data.extend([c.reference as f64, c.pos.i as f64, c.pos.j as f64, c.shapley]);
            data.extend(&c.vector);
        }
        FlatArray::new(vec![self.len(), width], data).expect("consistent row width")
    }

    pub fn from_array(arr: &FlatArray, top_m: usize, target_class: usize) -> Result<Self> {
        ensure!(
            arr.shape.len() == 2,
            Data,
            "pool array must be 2-d, got {:?}",
            arr.shape
        );
        let width = arr.shape[1];
        ensure!(width >= 4, Data, "pool rows need at least 4 columns");
        let candidates = arr
            .data
            .chunks(width)
            .map(|row| Candidate {
                reference: row[0] as usize,
                pos: GridPos::new(row[1] as usize, row[2] as usize),
                shapley: row[3],
                vector: row[4..].to_vec(),
            })
            .collect();
        Ok(Self {
            candidates,
            top_m,
            target_class,
        })
    }
}

/// Locations sorted by descending value, ties in row-major order.
pub fn ranked_locations(s: &ShapleyMap) -> Vec<GridPos> {
    let n = s.side();
    let mut order: Vec<usize> = (0..n * n).collect();
    let flat: Vec<f64> = s.values.iter().copied().collect();
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    order.into_iter().map(|k| GridPos::from_flat(k, n)).collect()
}

pub fn build_candidate_pool(
    bundle: &ModelBundle,
    refset: &ReferenceSet,
    m: usize,
    attribution: &Attribution,
    opts: ShapleyOptions,
) -> Result<CandidatePool> {
    ensure!(m >= 1, Validation, "top-m must be at least 1");
    let mut candidates = Vec::new();
    for (k, entry) in refset.entries.iter().enumerate() {
        let s = attribution.shapley(bundle, &entry.features, refset.target_class, opts)?;
        for pos in ranked_locations(&s).into_iter().take(m) {
            candidates.push(Candidate {
                reference: k,
                pos,
                shapley: s.at(pos),
                vector: entry.features.column(pos.i, pos.j),
            });
        }
    }
    Ok(CandidatePool {
        candidates,
        top_m: m,
        target_class: refset.target_class,
    })
}

/// Highest-valued location not yet replaced; row-major order breaks ties.
pub fn select_target(s: &ShapleyMap, replaced: &HashSet<GridPos>) -> Result<GridPos> {
    let n = s.side();
    let mut best: Option<(GridPos, f64)> = None;
    for k in 0..n * n {
        let pos = GridPos::from_flat(k, n);
        if replaced.contains(&pos) {
            continue;
        }
        let v = s.at(pos);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((pos, v));
        }
    }
    best.map(|(p, _)| p).ok_or(Error::Exhausted(n * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub l_sim: f64,
    pub l_cls: f64,
    pub l_tot: f64,
}

/// Scores writing `candidate` at `target` without mutating `h`.
pub fn score_candidate(
    bundle: &ModelBundle,
    h: &FeatureMap,
    target: GridPos,
    candidate: &Candidate,
    class: usize,
    sim_weight: f64,
) -> Result<CandidateScore> {
    ensure!(
        candidate.vector.len() == h.channels(),
        Validation,
        "candidate has {} channels, feature map has {}",
        candidate.vector.len(),
        h.channels()
    );
    ensure!(class < bundle.class_count, Validation, "class {class} out of range");
    let l_sim = cosine(h.column_view(target.i, target.j), &candidate.vector);
    let mut modified = h.clone();
    modified.set_column(target.i, target.j, &candidate.vector)?;
    let logits = bundle.logits_from_features(&modified)?;
    let l_cls = log_softmax_at(&logits, class);
    Ok(CandidateScore {
        l_sim,
        l_cls,
        l_tot: sim_weight * l_sim + l_cls,
    })
}

/// Exhaustive argmax of the joint objective over the pool. Equal totals go to
/// the lexicographically smallest `(k, i, j)`.
pub fn best_candidate<'p>(
    bundle: &ModelBundle,
    h: &FeatureMap,
    target: GridPos,
    pool: &'p CandidatePool,
    class: usize,
    sim_weight: f64,
) -> Result<(&'p Candidate, CandidateScore)> {
    if pool.is_empty() {
        return Err(Error::Configuration("candidate pool is empty".into()));
    }
    let scores = scan(bundle, h, target, pool, class, sim_weight)?;
    let mut best = 0;
    for (idx, score) in scores.iter().enumerate().skip(1) {
        let current = scores[best].l_tot;
        if score.l_tot > current || (score.l_tot == current && pool.candidates[idx].key() < pool.candidates[best].key())
        {
            best = idx;
        }
    }
    Ok((&pool.candidates[best], scores[best]))
}

#[cfg(feature = "parallel")]
fn scan(
    bundle: &ModelBundle,
    h: &FeatureMap,
    target: GridPos,
    pool: &CandidatePool,
    class: usize,
    sim_weight: f64,
) -> Result<Vec<CandidateScore>> {
    use rayon::prelude::*;
    pool.candidates
        .par_iter()
        .map(|c| score_candidate(bundle, h, target, c, class, sim_weight))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn scan(
    bundle: &ModelBundle,
    h: &FeatureMap,
    target: GridPos,
    pool: &CandidatePool,
    class: usize,
    sim_weight: f64,
) -> Result<Vec<CandidateScore>> {
    pool.candidates
        .iter()
        .map(|c| score_candidate(bundle, h, target, c, class, sim_weight))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub reference: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementStep {
    pub t: usize,
    pub target: GridPos,
    pub source: SourceRef,
    pub l_sim: f64,
    pub l_cls: f64,
    pub l_tot: f64,
    pub scores_after: ClassScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AlreadyCorrect,
    Flipped,
    MaxIterations,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_iters: usize,
    pub sim_weight: f64,
    pub score_mode: ScoreMode,
    pub chunk_size: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            sim_weight: 1.0,
            score_mode: ScoreMode::Probability,
            chunk_size: crate::saliency::DEFAULT_CHUNK,
        }
    }
}

impl EngineConfig {
    fn shapley_options(&self) -> ShapleyOptions {
        ShapleyOptions {
            score_mode: self.score_mode,
            chunk_size: self.chunk_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualResult {
    pub status: Status,
    pub stop_reason: StopReason,
    pub original_class: usize,
    pub true_class: usize,
    pub h0: FeatureMap,
    pub h_star: FeatureMap,
    pub trace: Vec<ReplacementStep>,
    pub iterations: usize,
    /// Contributions of `h0` to the originally predicted class.
    pub s0: ShapleyMap,
    /// Contributions of `h_star` to the true class.
    pub s_star: ShapleyMap,
}

pub fn generate_counterfactual(
    bundle: &ModelBundle,
    h0: &FeatureMap,
    true_class: usize,
    pool: &CandidatePool,
    attribution: &Attribution,
    cfg: &EngineConfig,
) -> Result<CounterfactualResult> {
    bundle.check_features(h0)?;
    ensure!(
        true_class < bundle.class_count,
        Validation,
        "true class {true_class} out of range"
    );
    let opts = cfg.shapley_options();
    let mut scores = bundle.predict_from_features(h0)?;
    let original_class = scores.predicted_class;
    let s0 = attribution.shapley(bundle, h0, original_class, opts)?;
    if original_class == true_class {
        return Ok(CounterfactualResult {
            status: Status::Success,
            stop_reason: StopReason::AlreadyCorrect,
            original_class,
            true_class,
            h0: h0.clone(),
            h_star: h0.clone(),
            trace: Vec::new(),
            iterations: 0,
            s_star: s0.clone(),
            s0,
        });
    }
    ensure!(!pool.is_empty(), Configuration, "candidate pool is empty");

    let mut h = h0.clone();
    let mut replaced = HashSet::new();
    let mut trace = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for t in 0..cfg.max_iters {
        // contributions to whatever is currently (wrongly) predicted
        let s_t = if t == 0 {
            s0.clone()
        } else {
            attribution.shapley(bundle, &h, scores.predicted_class, opts)?
        };
        let target = match select_target(&s_t, &replaced) {
            Ok(p) => p,
            Err(Error::Exhausted(_)) => {
                stop_reason = StopReason::Exhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        let (cand, score) = best_candidate(bundle, &h, target, pool, true_class, cfg.sim_weight)?;
        h.set_column(target.i, target.j, &cand.vector)?;
        replaced.insert(target);
        scores = bundle.predict_from_features(&h)?;
        trace.push(ReplacementStep {
            t,
            target,
            source: SourceRef {
                reference: cand.reference,
                i: cand.pos.i,
                j: cand.pos.j,
            },
            l_sim: score.l_sim,
            l_cls: score.l_cls,
            l_tot: score.l_tot,
            scores_after: scores.clone(),
        });
        if scores.predicted_class == true_class {
            stop_reason = StopReason::Flipped;
            break;
        }
    }

    let status = if stop_reason == StopReason::Flipped {
        Status::Success
    } else {
        Status::Failure
    };
    let mut s_star = attribution.shapley(bundle, &h, true_class, opts)?;
    s_star.iteration = trace.len();
    Ok(CounterfactualResult {
        status,
        stop_reason,
        original_class,
        true_class,
        h0: h0.clone(),
        h_star: h,
        iterations: trace.len(),
        trace,
        s0,
        s_star,
    })
}

/// Re-applies a trace to `h0` using the pool's candidate vectors.
pub fn replay(h0: &FeatureMap, trace: &[ReplacementStep], pool: &CandidatePool) -> Result<FeatureMap> {
    let mut h = h0.clone();
    for step in trace {
        let cand = pool
            .find(step.source.reference, GridPos::new(step.source.i, step.source.j))
            .ok_or_else(|| Error::Data(format!("trace step {} names a candidate missing from the pool", step.t)))?;
        h.set_column(step.target.i, step.target.j, &cand.vector)?;
    }
    Ok(h)
}

/// Findings of an independent post-hoc check of a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub status_matches_prediction: bool,
    pub replay_identical: bool,
    pub no_revisits: bool,
    pub single_column_steps: bool,
    pub untouched_locations_identical: bool,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.status_matches_prediction
            && self.replay_identical
            && self.no_revisits
            && self.single_column_steps
            && self.untouched_locations_identical
    }
}

pub fn audit(bundle: &ModelBundle, result: &CounterfactualResult, pool: &CandidatePool) -> Result<Audit> {
    let predicted = bundle.predict_from_features(&result.h_star)?.predicted_class;
    let status_matches_prediction = (result.status == Status::Success) == (predicted == result.true_class);
    let replay_identical = replay(&result.h0, &result.trace, pool)? == result.h_star;
    let targets: HashSet<GridPos> = result.trace.iter().map(|s| s.target).collect();
    let no_revisits = targets.len() == result.trace.len();

    let mut single_column_steps = true;
    let mut h = result.h0.clone();
    for step in &result.trace {
        let cand = pool
            .find(step.source.reference, GridPos::new(step.source.i, step.source.j))
            .ok_or_else(|| Error::Data("trace names a missing candidate".into()))?;
        let mut next = h.clone();
        next.set_column(step.target.i, step.target.j, &cand.vector)?;
        for (((_, i, j), &a), &b) in h.array().indexed_iter().zip(next.array().iter()) {
            if a != b && (i, j) != (step.target.i, step.target.j) {
                single_column_steps = false;
            }
        }
        h = next;
    }

    let untouched_locations_identical = result
        .h0
        .array()
        .indexed_iter()
        .zip(result.h_star.array().iter())
        .all(|(((_, i, j), &a), &b)| targets.contains(&GridPos::new(i, j)) || a.to_bits() == b.to_bits());

    Ok(Audit {
        status_matches_prediction,
        replay_identical,
        no_revisits,
        single_column_steps,
        untouched_locations_identical,
    })
}

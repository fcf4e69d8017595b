//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{flipside, run_dir, scratch, stderr, toy_run};
use flipside_core::config::RunConfig;
use flipside_core::contrastive::{difference_field, dominant_map, invariant_map, normalize_field};
use flipside_core::counterfactual::{
    audit, best_candidate, score_candidate, Candidate, CandidatePool, Status, DEFAULT_MAX_ITERS, DEFAULT_REFERENCE_SIZE,
};
use flipside_core::data::{mine_misclassified, placement, Split, SyntheticConfig};
use flipside_core::evaluation::{
    compact_activation_score, deletion_curve, deletion_ordering_trials, insertion_curve, step_count, PartSample,
    DEFAULT_STEP_FRACTION, SUPPORT_EPSILON,
};
use flipside_core::imaging::{gaussian_blur, BlurSpec};
use flipside_core::model::{GapLinearHead, ModelBundle, ScoreMode};
use flipside_core::pipeline::Explainer;
use flipside_core::record::{sample_stem, ExplanationRecord};
use flipside_core::saliency::{shapley_map, PartitionBank, ShapleyMap};
use flipside_core::tensor::{FeatureMap, GridPos};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, n: usize, lo: f64, hi: f64) -> FeatureMap {
    FeatureMap::new(Array3::from_shape_fn((c, n, n), |_| rng.random_range(lo..hi))).unwrap()
}

fn linear_bundle(rng: &mut ChaCha8Rng, classes: usize, c: usize, n: usize) -> (ModelBundle, Array2<f64>) {
    let w = Array2::from_shape_fn((classes, c), |_| rng.random_range(-1.0..1.0));
    let head = GapLinearHead::zero_bias(w.clone());
    let bundle = ModelBundle::head_only("linear", Arc::new(head), (c, n, n)).unwrap();
    (bundle, w)
}

/// Zero-bias linear head in logit mode: the contribution of location k is
/// exactly the logit of the map masked by the kernel centred on k.
fn linear_head_shapley() -> Outcome {
    let (n, c, classes, sigma) = (8, 32, 5, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (bundle, w) = linear_bundle(&mut rng, classes, c, n);
    let h = random_map(&mut rng, c, n, 0.0, 2.0);
    let bank = PartitionBank::new(n, sigma).unwrap();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for class in 0..classes {
        let s = shapley_map(&bundle, &h, class, &bank, ScoreMode::Logit).map_err(|e| e.to_string())?;
        for ci in 0..n {
            for cj in 0..n {
                let mut logit = 0.0;
                for ch in 0..c {
                    let mut pooled = 0.0;
                    for x in 0..n {
                        for y in 0..n {
                            let d2 = (x as f64 - ci as f64).powi(2) + (y as f64 - cj as f64).powi(2);
                            let g = (-d2 / (2.0 * sigma * sigma)).exp();
                            pooled += h.array()[[ch, x, y]] * g;
                        }
                    }
                    logit += w[[class, ch]] * pooled / (n * n) as f64;
                }
                worst = worst.max((s.values[[ci, cj]] - logit).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    check!(worst < 1e-6, "max abs error {worst:e}");
    check!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "max abs error {worst:.2e} over {classes} classes, {elapsed:.2?}"
    ))
}

/// A narrow kernel isolates one column, so the map approaches occlusion.
fn occlusion_limit() -> Outcome {
    let run = toy_run();
    let (c, n, _) = run.bundle.feature_shape;
    let bank = PartitionBank::new(n, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let h = random_map(&mut rng, c, n, 0.0, 3.0);
        let class = run.bundle.predict_from_features(&h).unwrap().predicted_class;
        let full = run.bundle.predict_from_features(&h).unwrap().probabilities[class];
        let s = shapley_map(&run.bundle, &h, class, &bank, ScoreMode::Probability).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                let mut occluded = h.clone();
                occluded.set_column(i, j, &vec![0.0; c]).unwrap();
                let p = run.bundle.predict_from_features(&occluded).unwrap().probabilities[class];
                worst = worst.max((s.values[[i, j]] - (full - p)).abs());
            }
        }
    }
    check!(worst < 1e-4, "max abs error {worst:e}");
    Ok(format!("max abs error {worst:.2e} on 10 maps"))
}

fn counterfactual_soundness() -> Outcome {
    let run = toy_run();
    let config = RunConfig::default();
    check!(config.max_iters == 100, "max_iters is {}", config.max_iters);
    let mined = mine_misclassified(&run.bundle, &run.dataset, Split::Val).map_err(|e| e.to_string())?;
    check!(mined.len() >= 30, "only {} mined misclassifications", mined.len());
    let explainer = Explainer::new(&run.bundle, &run.dataset, config, None).map_err(|e| e.to_string())?;
    let mut successes = 0;
    for m in &mined {
        let e = explainer.explain(&m.sample_id).map_err(|e| e.to_string())?;
        let pool = explainer.pool(m.true_class).map_err(|e| e.to_string())?;
        let a = audit(&run.bundle, &e.result, &pool).map_err(|e| e.to_string())?;
        check!(a.passed(), "{} fails the audit: {a:?}", m.sample_id);
        if e.result.status == Status::Success {
            let p = run
                .bundle
                .predict_from_features(&e.result.h_star)
                .unwrap()
                .predicted_class;
            check!(p == m.true_class, "{} success predicts {p}", m.sample_id);
            successes += 1;
        }
    }
    let rate = successes as f64 / mined.len() as f64;
    check!(rate >= 0.8, "success rate {rate:.3} ({successes}/{})", mined.len());
    Ok(format!(
        "{successes}/{} succeed, all traces replay and never revisit",
        mined.len()
    ))
}

fn argmax_exhaustiveness() -> Outcome {
    let (c, n, classes) = (4, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut ties = 0;
    for trial in 0..100 {
        let (bundle, _) = linear_bundle(&mut rng, classes, c, n);
        let h = random_map(&mut rng, c, n, 0.0, 2.0);
        let target = GridPos::new(rng.random_range(0..n), rng.random_range(0..n));
        let class = rng.random_range(0..classes);
        let size = rng.random_range(1..12);
        let mut candidates: Vec<Candidate> = (0..size)
            .map(|r| Candidate {
                reference: r,
                pos: GridPos::new(rng.random_range(0..n), rng.random_range(0..n)),
                shapley: rng.random_range(0.0..1.0),
                vector: (0..c).map(|_| rng.random_range(0.0..2.0)).collect(),
            })
            .collect();
        // duplicated vectors under other keys force exact ties
        if trial % 3 == 0 {
            let mut dup = candidates[0].clone();
            dup.reference = rng.random_range(0..size);
            dup.pos = GridPos::new(rng.random_range(0..n), rng.random_range(0..n));
            candidates.push(dup);
        }
        let pool = CandidatePool::from_candidates(candidates, 10, class);
        let (chosen, score) = best_candidate(&bundle, &h, target, &pool, class, 1.0).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = pool
            .candidates()
            .iter()
            .map(|cand| score_candidate(&bundle, &h, target, cand, class, 1.0).unwrap().l_tot)
            .collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        check!(
            score.l_tot == best,
            "trial {trial}: chose {} below max {best}",
            score.l_tot
        );
        let first = pool
            .candidates()
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s == best)
            .map(|(cand, _)| (cand.reference, cand.pos.i, cand.pos.j))
            .min()
            .unwrap();
        if pool
            .candidates()
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s == best)
            .count()
            > 1
        {
            ties += 1;
        }
        check!(
            (chosen.reference, chosen.pos.i, chosen.pos.j) == first,
            "trial {trial}: tie broken to {:?}, expected {first:?}",
            (chosen.reference, chosen.pos.i, chosen.pos.j)
        );
    }
    Ok(format!("100 triples exact, {ties} with ties"))
}

fn loop_map(s: &Array2<f64>, from: &FeatureMap, to: &FeatureMap) -> Array2<f64> {
    let (c, n, _) = from.shape();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..c {
                let diff = from.array()[[k, i, j]] - to.array()[[k, i, j]];
                if diff > 0.0 {
                    d[i * n + j] += diff;
                }
            }
        }
    }
    let total: f64 = d.iter().sum();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let norm = if total > 0.0 { d[i * n + j] / total } else { 0.0 };
        (s[[i, j]] * norm).max(0.0)
    })
}

fn contrastive_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for t in 0..20 {
        let (c, n) = (rng.random_range(1..6), rng.random_range(2..9));
        let h0 = random_map(&mut rng, c, n, -2.0, 2.0);
        let h_star = random_map(&mut rng, c, n, -2.0, 2.0);
        let smap = |rng: &mut ChaCha8Rng, class| ShapleyMap {
            values: Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0)),
            class_index: class,
            score_mode: ScoreMode::Probability,
            iteration: 0,
        };
        let s0 = smap(&mut rng, 0);
        let s_star = smap(&mut rng, 1);
        let inv = invariant_map(&s0, &h0, &h_star).map_err(|e| e.to_string())?;
        let dom = dominant_map(&s_star, &h_star, &h0).map_err(|e| e.to_string())?;
        let inv_o = loop_map(&s0.values, &h0, &h_star);
        let dom_o = loop_map(&s_star.values, &h_star, &h0);
        for (a, b) in inv.iter().zip(&inv_o).chain(dom.iter().zip(&dom_o)) {
            worst = worst.max((a - b).abs());
        }
        for (&a, &b) in h0.array().iter().zip(h_star.array().iter()) {
            check!(
                (a - b).max(0.0) * (b - a).max(0.0) == 0.0,
                "input {t}: channels overlap"
            );
        }
        for (from, to) in [(&h0, &h_star), (&h_star, &h0)] {
            let total = normalize_field(&difference_field(from, to).unwrap()).sum();
            check!(
                total == 0.0 || (total - 1.0).abs() < 1e-6,
                "input {t}: field sums to {total}"
            );
        }
    }
    check!(worst < 1e-9, "max abs error {worst:e}");
    Ok(format!("20 inputs, max abs error {worst:.2e}"))
}

fn curve_protocol() -> Outcome {
    let steps = step_count(DEFAULT_STEP_FRACTION).map_err(|e| e.to_string())?;
    check!(steps == 56, "default step gives {steps} steps");
    let run = toy_run();
    let blur = BlurSpec::default();
    let sample = &run.dataset.samples(Split::Val)[0];
    let image = run.dataset.load_image(sample).unwrap();
    let class = sample.label;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let sal = Array2::from_shape_fn((image.height(), image.width()), |_| rng.random_range(0.0..1.0));
    let del = deletion_curve(&run.bundle, &image, sal.view(), class, DEFAULT_STEP_FRACTION, blur).unwrap();
    let ins = insertion_curve(&run.bundle, &image, sal.view(), class, DEFAULT_STEP_FRACTION, blur).unwrap();
    check!(
        del.steps() == 56 && ins.steps() == 56,
        "curves have {} and {} steps",
        del.steps(),
        ins.steps()
    );
    let original = run.bundle.predict_from_image(&image).unwrap().probabilities[class];
    let blurred = run
        .bundle
        .predict_from_image(&gaussian_blur(&image, blur).unwrap())
        .unwrap()
        .probabilities[class];
    let gaps = [
        (del.points[0].probability - original).abs(),
        (del.points[56].probability - blurred).abs(),
        (ins.points[0].probability - blurred).abs(),
        (ins.points[56].probability - original).abs(),
    ];
    let gap = gaps.iter().cloned().fold(0.0, f64::max);
    check!(gap < 1e-6, "endpoint gap {gap:e}");

    // correctly classified validation images with their known marker region
    let cfg = SyntheticConfig::default();
    let mut parts = Vec::new();
    for (n, s) in run.dataset.samples(Split::Val).iter().enumerate() {
        let image = run.dataset.load_image(s).unwrap();
        if run.bundle.predict_from_image(&image).unwrap().predicted_class != s.label {
            continue;
        }
        parts.push(PartSample {
            image,
            class_index: s.label,
            region: placement(&cfg, common::DATA_SEED, Split::Val, n % cfg.classes, n / cfg.classes),
        });
        if parts.len() == 40 {
            break;
        }
    }
    let start = Instant::now();
    let trials = deletion_ordering_trials(&run.bundle, &parts, 50, 10, 1000, DEFAULT_STEP_FRACTION, blur)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let wins = trials.iter().filter(|t| t.informed_wins()).count();
    check!(wins * 10 >= 9 * trials.len(), "informed wins only {wins}/50");
    check!(elapsed < Duration::from_secs(600), "trials took {elapsed:?}");
    Ok(format!(
        "56 steps, endpoint gap {gap:.1e}, informed wins {wins}/50 in {elapsed:.1?}"
    ))
}

fn xi_fixtures() -> Outcome {
    let ones = Array2::<f64>::ones((8, 8));
    let s = compact_activation_score(ones.view(), ones.view(), SUPPORT_EPSILON).unwrap();
    check!(s.xi == 1.0, "all-ones gives {}", s.xi);
    let mut dom = Array2::<f64>::zeros((8, 8));
    for (i, j) in [(0, 0), (3, 4), (5, 1), (7, 6)] {
        dom[[i, j]] = 16.0;
    }
    let s = compact_activation_score(dom.view(), ones.view(), SUPPORT_EPSILON).unwrap();
    check!(s.xi == 16.0, "4-of-64 support gives {}", s.xi);
    let zero = Array2::<f64>::zeros((8, 8));
    let s = compact_activation_score(zero.view(), ones.view(), SUPPORT_EPSILON).unwrap();
    check!(s.xi == 0.0, "zero map gives {}", s.xi);
    Ok("1, 16 and 0 exactly".into())
}

fn end_to_end_budget() -> Outcome {
    let run = toy_run();
    let m = mine_misclassified(&run.bundle, &run.dataset, Split::Val).unwrap();
    let sample = &m.first().ok_or("nothing mined")?.sample_id;
    let out = scratch("acceptance-explain");
    let start = Instant::now();
    let o = flipside([
        "explain",
        "--model",
        run_dir().to_str().unwrap(),
        "--sample",
        sample,
        "--out-dir",
        out.to_str().unwrap(),
        "--no-cache",
    ]);
    let elapsed = start.elapsed();
    check!(o.status.code() == Some(0), "exit {:?}: {}", o.status.code(), stderr(&o));
    check!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    let stem = sample_stem(sample);
    let record = ExplanationRecord::read(&out.join(format!("{stem}.json"))).map_err(|e| e.to_string())?;
    record.validate().map_err(|e| e.to_string())?;
    for suffix in ["inv.png", "dom.png", "insertion.csv", "deletion.csv"] {
        let path = out.join(format!("{stem}.{suffix}"));
        check!(path.is_file(), "missing {}", path.display());
    }
    for curve in ["insertion.csv", "deletion.csv"] {
        let text = std::fs::read_to_string(out.join(format!("{stem}.{curve}"))).unwrap();
        check!(text.lines().count() == 58, "{curve} has {} lines", text.lines().count());
    }
    Ok(format!(
        "explain in {elapsed:.2?}, record valid, 2 overlays and 2 curves written"
    ))
}

fn defaults_audit() -> Outcome {
    let d = RunConfig::default();
    check!(d.sigma == 0.8, "sigma {}", d.sigma);
    check!(d.u_size == 20 && DEFAULT_REFERENCE_SIZE == 20, "|U| {}", d.u_size);
    check!(
        d.max_iters == 100 && DEFAULT_MAX_ITERS == 100,
        "max_iters {}",
        d.max_iters
    );
    check!(
        d.step_fraction == 0.018 && DEFAULT_STEP_FRACTION == 0.018,
        "step {}",
        d.step_fraction
    );
    Ok("sigma 0.8, |U| 20, max_iters 100, step 1.8%".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("linear-head shapley oracle", linear_head_shapley),
        ("occlusion-limit oracle", occlusion_limit),
        ("counterfactual soundness", counterfactual_soundness),
        ("argmax exhaustiveness", argmax_exhaustiveness),
        ("contrastive-map oracle", contrastive_oracle),
        ("curve protocol", curve_protocol),
        ("compactness fixtures", xi_fixtures),
        ("end-to-end budget", end_to_end_budget),
        ("defaults audit", defaults_audit),
    ];
    // train the shared fixture before anything is timed
    toy_run();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

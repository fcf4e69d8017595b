mod common;

use std::time::Instant;

use flipside_core::config::{AttributionKind, RunConfig};
use flipside_core::counterfactual::Status;
use flipside_core::data::{mine_misclassified, Cache, Split};
use flipside_core::pipeline::Explainer;
use flipside_core::record::ExplanationRecord;
use flipside_core::store::FlatArray;

fn strip_timing(mut r: ExplanationRecord) -> ExplanationRecord {
    r.timing.created_unix = 0;
    r.timing.elapsed_ms = 0.0;
    r
}

#[test]
fn explain_writes_a_valid_record_and_its_files() {
    let run = common::toy_run();
    let mined = mine_misclassified(&run.bundle, &run.dataset, Split::Val).unwrap();
    let explainer = Explainer::new(&run.bundle, &run.dataset, RunConfig::default(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let start = Instant::now();
    let e = explainer.explain(&mined[0].sample_id).unwrap();
    let record = explainer.write(&e, dir.path()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 30.0);

    assert_eq!(record.class_p.index, mined[0].predicted_class);
    assert_eq!(record.class_q.index, mined[0].true_class);
    if record.status == Status::Success {
        assert_eq!(
            run.bundle
                .predict_from_features(&e.result.h_star)
                .unwrap()
                .predicted_class,
            record.class_q.index
        );
    }
    let stem = "val_".to_string() + &mined[0].sample_id[4..].replace('/', "_");
    let back = ExplanationRecord::read(&dir.path().join(format!("{stem}.json"))).unwrap();
    assert_eq!(back, record);
    for f in [&record.maps.inv_overlay, &record.maps.dom_overlay] {
        let img = image::open(dir.path().join(f)).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
    }
    let inv = FlatArray::decode(&std::fs::read(dir.path().join(&record.maps.inv_image_file)).unwrap()).unwrap();
    assert_eq!(inv.shape, vec![64, 64]);
    for c in &record.curves {
        let csv = std::fs::read_to_string(dir.path().join(&c.file)).unwrap();
        assert_eq!(csv.lines().count(), 1 + 57);
        assert_eq!(c.steps, 56);
    }
    assert!(record.fine_grained.is_some());
}

#[test]
fn correctly_classified_sample_is_trivial() {
    let run = common::toy_run();
    let explainer = Explainer::new(&run.bundle, &run.dataset, RunConfig::default(), None).unwrap();
    let sample = run
        .dataset
        .val
        .iter()
        .find(|s| {
            run.bundle
                .predict_from_image(&run.dataset.load_image(s).unwrap())
                .unwrap()
                .predicted_class
                == s.label
        })
        .unwrap();
    let e = explainer.explain(&sample.id).unwrap();
    let record = explainer.record(&e);
    record.validate().unwrap();
    assert_eq!(record.status, Status::Success);
    assert!(record.trace.is_empty());
    assert!(e.maps.inv.iter().all(|&v| v == 0.0));
}

#[test]
fn reruns_reproduce_records_and_cache_serves_pools() {
    let run = common::toy_run();
    let mined = mine_misclassified(&run.bundle, &run.dataset, Split::Val).unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let config = RunConfig::default();
    let id = &mined[1].sample_id;

    let first = Explainer::new(
        &run.bundle,
        &run.dataset,
        config.clone(),
        Some(Cache::new(cache_dir.path())),
    )
    .unwrap();
    let a = first.record(&first.explain(id).unwrap());
    let files = walk(cache_dir.path());
    assert_eq!(files.len(), 1);

    let second = Explainer::new(
        &run.bundle,
        &run.dataset,
        config.clone(),
        Some(Cache::new(cache_dir.path())),
    )
    .unwrap();
    let b = second.record(&second.explain(id).unwrap());
    let uncached = Explainer::new(&run.bundle, &run.dataset, config, None).unwrap();
    let c = uncached.record(&uncached.explain(id).unwrap());
    assert_eq!(strip_timing(a.clone()), strip_timing(b));
    assert_eq!(strip_timing(a), strip_timing(c));
}

#[test]
fn occlusion_variant_runs() {
    let run = common::toy_run();
    let mined = mine_misclassified(&run.bundle, &run.dataset, Split::Val).unwrap();
    let config = RunConfig {
        attribution: AttributionKind::Occlusion,
        ..Default::default()
    };
    let explainer = Explainer::new(&run.bundle, &run.dataset, config, None).unwrap();
    let record = explainer.record(&explainer.explain(&mined[0].sample_id).unwrap());
    record.validate().unwrap();
    assert_eq!(record.config.attribution, AttributionKind::Occlusion);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

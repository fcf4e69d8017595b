mod common;

use common::{flipside, run_dir, scratch, stderr, stdout, toy_run};
use flipside_core::config::RunConfig;
use flipside_core::counterfactual::{select_target, Candidate, CandidatePool, Status, StopReason};
use flipside_core::data::{mine_misclassified, Cache, CacheKey, Split};
use flipside_core::pipeline::Explainer;
use flipside_core::record::ExplanationRecord;
use flipside_core::saliency::ShapleyOptions;

fn first_mined() -> (String, usize) {
    let run = toy_run();
    let m = mine_misclassified(&run.bundle, &run.dataset, Split::Val).unwrap();
    (m[0].sample_id.clone(), m[0].true_class)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(flipside(["--help"]).status.code(), Some(0));
    assert_eq!(flipside(["--version"]).status.code(), Some(0));
    assert_eq!(flipside(["explain", "--help"]).status.code(), Some(0));
}

#[test]
fn argument_errors_exit_one() {
    assert_eq!(flipside(Vec::<&str>::new()).status.code(), Some(1));
    assert_eq!(flipside(["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        flipside(["explain", "--sigma", "abc", "--model", "x"]).status.code(),
        Some(1)
    );
}

#[test]
fn invalid_inputs_exit_one() {
    let dir = scratch("invalid");
    let o = flipside(["train-toy", "--out"].into_iter().map(String::from).chain([
        dir.join("run").display().to_string(),
        "--epochs".into(),
        "0".into(),
    ]));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("epochs"));

    let o = flipside([
        "explain",
        "--model",
        dir.join("missing").to_str().unwrap(),
        "--sample",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = flipside(["mine", "--model", dir.join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    toy_run();
    let model = run_dir();
    let o = flipside([
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--records",
        dir.join("nowhere").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not exist"));

    let o = flipside([
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--sample",
        "val/c99/9999",
        "--out-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = flipside([
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--sample",
        "val/c00/0000",
        "--sigma",
        "-1",
        "--out-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = flipside(["ablate", "--model", model.to_str().unwrap(), "--sample", "val/c00/0000"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mine_then_explain_then_evaluate() {
    toy_run();
    let model = run_dir();
    let dir = scratch("flow");
    let index = dir.join("mined.json");
    let o = flipside([
        "mine",
        "--model",
        model.to_str().unwrap(),
        "--out",
        index.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("misclassified"));

    let out = dir.join("records");
    let o = flipside([
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--index",
        index.to_str().unwrap(),
        "--limit",
        "3",
        "--out-dir",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let jsons: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    assert_eq!(jsons.len(), 3);
    for p in &jsons {
        ExplanationRecord::read(p).unwrap().validate().unwrap();
        let png = p.with_extension("inv.png");
        let img = image::open(&png).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
    }

    let o = flipside([
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--records",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("eval/report.txt")).unwrap();
    assert!(report.contains("samples: 3"));
    assert!(report.contains("mean_insertion_auc:"));
    assert!(report.contains("mean_xi:"));
    let csv = std::fs::read_to_string(out.join("eval/per_sample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn ablation_covers_the_cartesian_product() {
    let (sample, _) = first_mined();
    let dir = scratch("ablate");
    let table = dir.join("ablation.csv");
    let o = flipside([
        "ablate",
        "--model",
        run_dir().to_str().unwrap(),
        "--sample",
        &sample,
        "--sp",
        "on,off",
        "--topm",
        "5,10",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let keys: Vec<String> = rows
        .iter()
        .map(|r| r.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(keys, ["on,5", "on,10", "off,5", "off,10"]);
}

#[test]
fn topm_sweep_gives_one_row_per_value_and_single_record_evaluates() {
    let (sample, _) = first_mined();
    let dir = scratch("sweep");
    let model = run_dir();
    let table = dir.join("sweep.csv");
    let o = flipside([
        "ablate",
        "--model",
        model.to_str().unwrap(),
        "--sample",
        &sample,
        "--topm",
        "5,10,20",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 1 + 3);

    let records = dir.join("records");
    let o = flipside([
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--sample",
        &sample,
        "--out-dir",
        records.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = flipside([
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--records",
        records.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(records.join("eval/per_sample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let stem = flipside_core::record::sample_stem(&sample);
    let curve = std::fs::read_to_string(records.join(format!("eval/{stem}.deletion.csv"))).unwrap();
    assert_eq!(curve.lines().count(), 1 + 57);
}

/// A pool whose every candidate equals the column it would replace cannot
/// move the prediction, so one iteration ends in failure.
#[test]
fn unflippable_sample_exits_two() {
    let run = toy_run();
    let (sample_id, true_class) = first_mined();
    let out = scratch("unflippable");
    let cache = Cache::new(out.join(".cache"));
    let config = RunConfig {
        max_iters: 1,
        out_dir: out.clone(),
        ..RunConfig::default()
    };
    let explainer = Explainer::new(&run.bundle, &run.dataset, config.clone(), None).unwrap();
    let sample = run.dataset.find(&sample_id).unwrap();
    let h0 = run
        .bundle
        .extract_features(&run.dataset.load_image(sample).unwrap())
        .unwrap();
    let predicted = run.bundle.predict_from_features(&h0).unwrap().predicted_class;
    let s0 = explainer
        .attribution()
        .shapley(
            &run.bundle,
            &h0,
            predicted,
            ShapleyOptions {
                score_mode: config.score_mode,
                chunk_size: config.chunk_size,
            },
        )
        .unwrap();
    let target = select_target(&s0, &Default::default()).unwrap();
    let column: Vec<f64> = (0..h0.channels())
        .map(|c| h0.array()[[c, target.i, target.j]])
        .collect();
    let candidates = (0..3)
        .map(|r| Candidate {
            reference: r,
            pos: target,
            shapley: 1.0,
            vector: column.clone(),
        })
        .collect();
    let pool = CandidatePool::from_candidates(candidates, config.top_m, true_class);
    let key = CacheKey::new(
        run.bundle.model_id.clone(),
        run.dataset.dataset_id.clone(),
        format!("class/{true_class}"),
        config.pool_tag(),
    );
    cache.put(&key, &pool.to_array()).unwrap();

    let o = flipside([
        "explain",
        "--model",
        run_dir().to_str().unwrap(),
        "--sample",
        &sample_id,
        "--max-iters",
        "1",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}\n{}", stdout(&o), stderr(&o));
    let record =
        ExplanationRecord::read(&out.join(format!("{}.json", flipside_core::record::sample_stem(&sample_id)))).unwrap();
    assert_eq!(record.iterations, 1);
    assert_eq!(record.status, Status::Failure);
    assert_eq!(record.stop_reason, StopReason::MaxIterations);
    assert!((record.trace[0].l_sim - 1.0).abs() < 1e-12);
}

#[test]
fn train_toy_is_reproducible() {
    let dir = scratch("retrain");
    let small = |out: &std::path::Path| {
        let o = flipside([
            "train-toy",
            "--out",
            out.to_str().unwrap(),
            "--classes",
            "3",
            "--train-per-class",
            "50",
            "--val-per-class",
            "6",
            "--epochs",
            "1",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        let hash = text
            .lines()
            .find_map(|l| l.strip_prefix("metadata hash: "))
            .expect("hash line")
            .to_string();
        let id = text
            .lines()
            .find_map(|l| l.strip_prefix("model_id: "))
            .expect("id line")
            .to_string();
        (hash, id)
    };
    let a = small(&dir.join("a"));
    let b = small(&dir.join("b"));
    assert_eq!(a, b);
    assert_eq!(a.0.len(), 64);
}

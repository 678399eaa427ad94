use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use conceptlearn::data::ToySpec;
use conceptlearn::experiment::{
    emit_report, load_records, run_experiment, run_manual_baseline, save_manual, BaselineToggles, DatasetSource,
    ExperimentConfig,
};
use conceptlearn::VariantSpec;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "dataset": {"kind": "toy", "spec": {"n_instances": 1200}},
        "variants": ["pred", "pred-intuit-5"],
        "restarts": 3,
        "proposals_per_concept": 3,
        "baselines": {"al": true, "lr": true, "nn": true},
        "al": {"candidates": 10},
        "nn": {"iterations": 50, "step_sizes": [0.01, 0.1]},
        "output_dir": "unused",
        "master_seed": 11
    }))
    .unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn experiment_runs_are_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let records = run_experiment(&small_config(&a)).unwrap();
    run_experiment(&small_config(&b)).unwrap();

    let (sa, sb) = (snapshot(&a), snapshot(&b));
    // the config file records its own output directory
    let strip = |m: &BTreeMap<String, Vec<u8>>| -> BTreeMap<String, Vec<u8>> {
        m.iter().filter(|(k, _)| *k != "config.json").map(|(k, v)| (k.clone(), v.clone())).collect()
    };
    assert_eq!(strip(&sa), strip(&sb));
    for f in ["table1.csv", "ablation.csv", "coverage.csv", "summary.txt"] {
        assert!(sa.contains_key(f), "missing {f}");
    }
    assert!(sa.contains_key("runs/restart-000/pred.journal.jsonl"));

    assert_eq!(records.len(), 3);
    for r in &records {
        assert!(r.is_complete(), "{:?}", r.error);
        let methods: Vec<&str> = r.runs.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(methods, ["pred", "pred-intuit-5", "al", "lr", "nn"]);
        for m in &r.runs {
            assert_eq!(m.invariant_violations, 0);
            if let (Some(q), Some(dummy)) = (m.n_queries, m.n_dummy) {
                assert_eq!(q + dummy, 3 * 3);
            }
        }
        let al = r.runs.iter().find(|m| m.method == "al").unwrap();
        assert_eq!(al.n_queries, Some(9));
    }

    let table = String::from_utf8(sa["table1.csv"].clone()).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().nth(1).unwrap().starts_with("pred,3,"));
}

#[test]
fn resume_reuses_records_and_rejects_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.baselines = BaselineToggles::default();
    cfg.restarts = 2;
    run_experiment(&cfg).unwrap();
    let record = tmp.path().join("runs/restart-001/record.json");
    let before = fs::read(&record).unwrap();
    // a stale journal should survive because the record is reused
    let journal = tmp.path().join("runs/restart-001/pred.journal.jsonl");
    fs::write(&journal, b"marker").unwrap();
    run_experiment(&cfg).unwrap();
    assert_eq!(fs::read(&record).unwrap(), before);
    assert_eq!(fs::read(&journal).unwrap(), b"marker");

    let changed = ExperimentConfig {
        master_seed: 12,
        ..cfg
    };
    assert!(run_experiment(&changed).is_err());
}

#[test]
fn failed_restart_is_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.baselines = BaselineToggles::default();
    // every label negative makes every fit fail
    let mut spec = ToySpec {
        n_instances: 300,
        bias: -1000.0,
        ..ToySpec::default()
    };
    spec.concepts.iter_mut().for_each(|c| c.weight = 0.0);
    cfg.dataset = DatasetSource::Toy { spec, resample: true };
    cfg.restarts = 2;
    let outcome = run_experiment(&cfg);
    // no completed restart leaves nothing to report
    assert!(outcome.is_err());
    let saved = load_records(tmp.path()).unwrap();
    assert_eq!(saved.len(), 2);
    assert!(saved.iter().all(|r| r.error.is_some()));
}

#[test]
fn manual_curve_saturates_at_full_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.baselines = BaselineToggles::default();
    cfg.variants = vec![VariantSpec::Pred];
    let curve = run_manual_baseline(&cfg, 5).unwrap();
    assert_eq!(curve.points.len(), 5);
    // every toy concept has 4 features, so n = 4 and n = 5 use the full lists
    for p in &curve.points[3..] {
        assert_eq!(p.downstream_acc_test, curve.full_truth);
    }
    run_experiment(&cfg).unwrap();
    save_manual(&curve, tmp.path()).unwrap();
    let report = emit_report(tmp.path(), &tmp.path().join("report")).unwrap();
    let manual = &report.files["manual_curve.csv"];
    assert_eq!(manual.lines().count(), 6);
    assert!(tmp.path().join("report/manual_curve.csv").is_file());
}

mod common;

use std::process::Command;

use harness::config::{EvalMode, ReportEntry};
use harness::eval::{cmd_eval, Bundle};
use harness::forge::cmd_forge;
use harness::report::{cmd_report, read_summary_csv};
use harness::RunConfig;
use imagecore::{DatasetManifest, TaskKind};
use metrics::report::aggregate;
use metrics::MetricReport;

fn cfg(seed: u64, out: &std::path::Path) -> RunConfig {
    RunConfig { seed: Some(seed), out: Some(out.to_path_buf()), threads: Some(1), ..Default::default() }
}

#[test]
fn forge_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_forge(&cfg(7, &a)).unwrap();
    cmd_forge(&cfg(7, &b)).unwrap();
    let (ta, tb) = (common::tree(&a), common::tree(&b));
    assert!(ta.len() > 100);
    assert_eq!(ta, tb);
}

#[test]
fn threads_do_not_change_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(3, &dir.path().join("a"));
    c.forge.size = 30;
    c.forge.task_mix = [(TaskKind::Progress, 1.0), (TaskKind::Inpaint, 1.0)].into_iter().collect();
    cmd_forge(&c).unwrap();
    c.out = Some(dir.path().join("b"));
    c.threads = Some(4);
    cmd_forge(&c).unwrap();
    assert_eq!(common::tree(&dir.path().join("a")), common::tree(&dir.path().join("b")));
}

#[test]
fn segment_only_mix() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_forge(&cfg(1, dir.path())).unwrap();
    assert_eq!(summary.per_task.get(&TaskKind::Segment), Some(&100));
    let m = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    assert!(m.records.iter().all(|r| r.task == TaskKind::Segment));
}

#[test]
fn progression_category_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(11, dir.path());
    c.forge.size = 2000;
    c.forge.resolution = 32;
    c.forge.task_mix = [(TaskKind::Progress, 1.0)].into_iter().collect();
    c.threads = Some(4);
    cmd_forge(&c).unwrap();
    let m = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    let count = |name: &str| m.records.iter().filter(|r| r.category.as_deref() == Some(name)).count() as f64 / 2000.0;
    for (name, p) in [("stable", 0.713), ("recovery", 0.163), ("progression", 0.123)] {
        assert!((count(name) - p).abs() <= 0.05, "{name}: {}", count(name));
    }
}

#[test]
fn oracle_eval_is_perfect_and_aggregates_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let mut c = cfg(5, &corpus);
    c.forge.size = 90;
    c.forge.task_mix = TaskKind::ALL.iter().map(|t| (*t, 1.0)).collect();
    cmd_forge(&c).unwrap();
    c.out = Some(dir.path().join("eval"));
    c.eval.mode = EvalMode::Oracle;
    let bundle = cmd_eval(&c, &corpus.join("manifest.json"), None).unwrap();
    assert!(bundle.reports.values().all(|r| r.failures.is_empty()));
    let m = DatasetManifest::load(corpus.join("manifest.json")).unwrap();
    let n_rows: usize = bundle
        .reports
        .values()
        .map(|r| r.rows.iter().map(|row| row.sample_id.as_str()).collect::<std::collections::BTreeSet<_>>().len())
        .sum();
    assert_eq!(n_rows, m.split(imagecore::Split::Test).count());
    for (task, report) in &bundle.reports {
        for row in &report.rows {
            match row.metric.as_str() {
                "dice" | "ssim" | "f1" => assert_eq!(row.value, 1.0, "{task} {}", row.sample_id),
                "psnr" => assert_eq!(row.value, f64::INFINITY),
                "lpips" => assert_eq!(row.value, 0.0),
                _ => {}
            }
        }
    }
    let progress = bundle.reports.get("progress").expect("progress rows");
    for row in progress.rows.iter().filter(|r| r.metric == "psnr") {
        assert!(dir.path().join("eval/artifacts").join(format!("{}_change.png", row.sample_id)).exists());
    }
    for task in bundle.reports.keys() {
        let csv = MetricReport::read_csv(dir.path().join(format!("eval/metrics/{task}.csv"))).unwrap();
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("eval/metrics/{task}.aggregates.json"))).unwrap(),
        )
        .unwrap();
        for metric in csv.metrics() {
            let values = csv.values(&metric);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            match &json[&metric]["mean"] {
                serde_json::Value::Number(n) => assert!((n.as_f64().unwrap() - mean).abs() < 1e-12),
                serde_json::Value::String(s) => assert_eq!(s, "inf"),
                other => panic!("{other:?}"),
            }
        }
    }
}

#[test]
fn failing_samples_become_failure_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let mut c = cfg(9, &corpus);
    c.forge.size = 40;
    cmd_forge(&c).unwrap();
    let m = DatasetManifest::load(corpus.join("manifest.json")).unwrap();
    let victim = m.split(imagecore::Split::Test).next().unwrap();
    std::fs::remove_file(corpus.join(&victim.target_ref)).unwrap();
    c.out = Some(dir.path().join("eval"));
    c.eval.mode = EvalMode::Oracle;
    let bundle = cmd_eval(&c, &corpus.join("manifest.json"), None).unwrap();
    let seg = &bundle.reports["segment"];
    assert_eq!(seg.failures.len(), 1);
    assert_eq!(seg.failures[0].sample_id, victim.id);
    assert!(!seg.failures[0].reason.is_empty());
    assert_eq!(seg.rows.iter().filter(|r| r.metric == "dice").count(), m.split(imagecore::Split::Test).count() - 1);
}

fn fixture_bundle(dir: &std::path::Path, values: &[f64]) {
    let mut report = MetricReport::new();
    for (i, v) in values.iter().enumerate() {
        report.push(format!("s{i}"), "dice", *v);
    }
    let info = harness::eval::BundleInfo {
        manifest: None,
        checkpoint: None,
        mode: EvalMode::Model,
        resolution: Some(32),
        sample_steps: 20,
        seed: 0,
        records: values.len(),
        failures: 0,
        tasks: Vec::new(),
    };
    Bundle { info, reports: [("segment".to_string(), report)].into_iter().collect() }.save(dir).unwrap();
}

#[test]
fn five_model_dice_table() {
    let dir = tempfile::tempdir().unwrap();
    let models = [("world-model", 0.77), ("baseline-a", 0.52), ("baseline-b", 0.61), ("baseline-c", 0.64), ("baseline-d", 0.69)];
    let entries: Vec<ReportEntry> = models
        .iter()
        .map(|(name, v)| {
            let b = dir.path().join(name);
            fixture_bundle(&b, &[*v]);
            ReportEntry { name: name.to_string(), bundle: b }
        })
        .collect();
    let out = dir.path().join("report");
    let summary = cmd_report(&cfg(0, &out), &entries).unwrap();
    let md = std::fs::read_to_string(&summary.markdown).unwrap();
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| model")).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], "| world-model | 0.770 ± 0.000 |");
    assert_eq!(rows[4], "| baseline-d | 0.690 ± 0.000 |");
    assert_eq!(summary.plots.len(), 1);
    assert!(summary.plots[0].exists());
}

#[test]
fn summary_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let values = [0.1, 0.35, 0.9, 0.7];
    fixture_bundle(&dir.path().join("m"), &values);
    let entries = [ReportEntry { name: "m".into(), bundle: dir.path().join("m") }];
    let summary = cmd_report(&cfg(0, &dir.path().join("r")), &entries).unwrap();
    let back = read_summary_csv(&summary.csv).unwrap();
    assert_eq!(back, summary.rows);
    let a = aggregate(&values);
    assert_eq!((back[0].mean, back[0].sd, back[0].n), (a.mean, a.sd, a.n));
}

#[test]
fn empty_bundle_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture_bundle(&dir.path().join("m"), &[]);
    let entries = [ReportEntry { name: "m".into(), bundle: dir.path().join("m") }];
    assert!(cmd_report(&cfg(0, &dir.path().join("r")), &entries).is_err());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ocusim");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(bin).args(args).current_dir(dir.path()).output().unwrap();
    assert_eq!(run(&["forge", "--seed", "2", "--out", "c"]).status.code(), Some(0));
    assert_eq!(run(&["forge", "--out", "c2"]).status.code(), Some(1));
    assert!(!dir.path().join("c2").exists());
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.json"), r#"{"seed": 1, "colour": 3}"#).unwrap();
    assert_eq!(run(&["--config", "bad.json", "forge", "--out", "c3"]).status.code(), Some(1));
    std::fs::write(dir.path().join("junk.eywk"), b"not a checkpoint").unwrap();
    let out = run(&["eval", "--seed", "1", "--out", "e", "--manifest", "c/manifest.json", "--checkpoint", "junk.eywk"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["eval", "--seed", "1", "--out", "e", "--manifest", "c/manifest.json", "--mode", "oracle"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(run(&["report", "--seed", "1", "--out", "r", "e"]).status.code(), Some(0));
    assert!(dir.path().join("r/report.md").exists());
}

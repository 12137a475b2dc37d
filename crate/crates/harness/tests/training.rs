mod common;

use harness::forge::cmd_forge;
use harness::train::{cmd_train, CHECKPOINT_FILE, LOG_FILE};
use serde_json::Value;

fn log_lines(path: &std::path::Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn interrupted_run_replays_the_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let mut cfg = common::tiny_run(4, &corpus);
    cmd_forge(&cfg).unwrap();
    let manifest = corpus.join("manifest.json");

    cfg.out = Some(dir.path().join("full"));
    let full = cmd_train(&cfg, &manifest, None).unwrap();
    assert!(full.finished);

    cfg.out = Some(dir.path().join("split"));
    cfg.train.max_steps = Some(4);
    let first = cmd_train(&cfg, &manifest, None).unwrap();
    assert_eq!(first.step, 4);
    assert!(!first.finished);
    cfg.train.max_steps = None;
    let resumed = cmd_train(&cfg, &manifest, Some(&first.checkpoint)).unwrap();
    assert!(resumed.finished);
    assert_eq!(resumed.step, full.step);

    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("full", LOG_FILE), read("split", LOG_FILE));
    assert_eq!(read("full", CHECKPOINT_FILE), read("split", CHECKPOINT_FILE));

    let lines = log_lines(&full.log);
    let steps: Vec<&Value> = lines.iter().filter(|l| l.get("event").is_none()).collect();
    assert_eq!(steps[0]["step"], 0);
    assert_eq!(steps[0]["lr"].as_f64(), Some(1e-18));
    let phases: Vec<&str> =
        lines.iter().filter(|l| l["event"] == "phase").map(|l| l["phase"].as_str().unwrap()).collect();
    assert!(phases.contains(&"refine") && phases.contains(&"stage2"), "{phases:?}");
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let mut cfg = common::tiny_run(4, &corpus);
    cmd_forge(&cfg).unwrap();
    let bad = dir.path().join("bad.eywk");
    std::fs::write(&bad, b"XXXX\x01\x00\x00\x00").unwrap();
    cfg.out = Some(dir.path().join("t"));
    let err = cmd_train(&cfg, &corpus.join("manifest.json"), Some(&bad)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

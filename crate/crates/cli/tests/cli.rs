use std::path::Path;
use std::process::{Command, Output};

use mhca_cli::config::parse_config_str;

const TINY: &str = r#"{
  "widths": [4, 8],
  "hidden_units": 8,
  "heads": 2,
  "reduction": 2,
  "input_size": 16,
  "max_epochs": 2,
  "batch_size": 4,
  "freeze_fraction": 0.0,
  "learning_rate": 0.001,
  "data": {"synthetic": {"n_per_class": 5, "seed": 7}}
}"#;

fn mhca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhca")).args(args).output().expect("spawn mhca")
}

fn ok(args: &[&str]) -> String {
    let out = mhca(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = mhca(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("d.cads");
    let run = dir.path().join("run");
    ok(&["synth-data", "--config", &cfg, "--out", s(&data), "--output-dir", s(&run)]);
    assert!(data.exists());
    ok(&["train", "--config", &cfg, "--archive", s(&data), "--output-dir", s(&run)]);
    for f in ["config.resolved.json", "model.canw", "history.csv", "metrics.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let trained = std::fs::read_to_string(run.join("metrics.json")).unwrap();

    let ev = dir.path().join("eval");
    let ckpt = run.join("model.canw");
    ok(&["eval", "--config", &cfg, "--archive", s(&data), "--checkpoint", s(&ckpt), "--output-dir", s(&ev)]);
    let evaluated = std::fs::read_to_string(ev.join("metrics.json")).unwrap();
    assert_eq!(evaluated, trained, "eval on the test split reproduces train's metrics");
}

#[test]
fn resolved_config_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", &cfg, "--seed", "3", "--output-dir", s(&a)]);
    let echo = a.join("config.resolved.json");
    ok(&["train", "--config", s(&echo), "--output-dir", s(&b)]);
    let read = |d: &Path| std::fs::read(d.join("metrics.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"heads": 16, "data": {"synthetic": {"n_per_class": 2, "seed": 0}}, "input_size": 16}"#)
        .unwrap();
    let out = dir.path().join("o");
    ok(&["synth-data", "--config", s(&cfg), "--output-dir", s(&out)]);
    let echoed = parse_config_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(echoed.heads, 16);
    assert_eq!(echoed.input_size, 16);

    let mut tiny = parse_config_str(TINY).unwrap();
    tiny.max_epochs = 1;
    std::fs::write(&cfg, tiny.to_json().unwrap()).unwrap();
    ok(&["train", "--config", s(&cfg), "--heads", "4", "--reduction", "1", "--output-dir", s(&out)]);
    let echoed = parse_config_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!((echoed.heads, echoed.reduction), (4, 1));
}

#[test]
fn bad_input_fails_closed_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let out = dir.path().join("o");
    let o = s(&out);

    std::fs::write(&cfg, r#"{"batch_size": -1}"#).unwrap();
    assert!(fails(&["train", "--config", s(&cfg), "--output-dir", o]).contains("batch_size"));
    std::fs::write(&cfg, r#"{"head": 4}"#).unwrap();
    assert!(fails(&["train", "--config", s(&cfg), "--output-dir", o]).contains("head"));
    std::fs::write(&cfg, "{not json").unwrap();
    assert!(!fails(&["train", "--config", s(&cfg), "--output-dir", o]).is_empty());

    assert!(fails(&["train", "--bogus-flag", "--output-dir", o]).contains("bogus"));
    assert!(fails(&["train", "--freeze-fraction", "1.5", "--output-dir", o]).contains("freeze_fraction"));
    assert!(fails(&["train", "--config", s(&dir.path().join("missing.json"))]).contains("missing.json"));
    let e = fails(&["eval", "--checkpoint", s(&dir.path().join("none.canw")), "--output-dir", o]);
    assert!(e.contains("none.canw"), "{e}");
    assert!(!out.join("metrics.json").exists(), "no computation after a failure");
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--config", &cfg, "--epochs", "1", "--output-dir", s(&run)]);
    let ckpt = run.join("model.canw");
    let e = fails(&["eval", "--config", &cfg, "--input-size", "20", "--checkpoint", s(&ckpt), "--output-dir", s(&run)]);
    assert!(e.contains("checkpoint expects"), "{e}");
    std::fs::write(&ckpt, b"CANW\x01\x00").unwrap();
    assert!(fails(&["eval", "--config", &cfg, "--checkpoint", s(&ckpt), "--output-dir", s(&run)]).contains("truncated"));
}

#[test]
fn compare_lists_both_models_by_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("cmp");
    let text = ok(&["compare", "--config", &cfg, "--runs", "2", "--output-dir", s(&out)]);
    assert!(text.contains("baseline") && text.contains("attention"), "{text}");
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["accuracy_pct"].as_f64() >= rows[1]["accuracy_pct"].as_f64());
    assert_eq!(std::fs::read_to_string(out.join("comparison.csv")).unwrap().lines().count(), 3);
}

#[test]
fn gradcheck_passes() {
    let text = ok(&["gradcheck", "--seeds", "1"]);
    assert!(text.contains("PASS") && !text.contains("FAIL"), "{text}");
    assert!(!fails(&["gradcheck", "--seeds", "0"]).is_empty());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 7
[data.suite]
kind = "standard"
n_train = 4
n_test = 2
[forecaster]
epochs = 3
channels = [8, 8]
[ensemble.forest]
n_trees = 10
[ensemble.gbm]
n_rounds = 30
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikerul"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(dir: &Path) {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn synth_is_deterministic_and_complete() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        ok(&["synth", "--out", out, "--seed", "42", "--n-train", "2", "--n-test", "1"], d);
    }
    let mut names: Vec<String> = fs::read_dir(d.join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".meta.toml")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 3);
    for n in &names {
        assert_eq!(read(d.join("a").join(n)), read(d.join("b").join(n)), "{n}");
    }
    ok(&["synth", "--out", "c", "--seed", "43", "--n-train", "2", "--n-test", "1"], d);
    assert_ne!(read(d.join("a/train_01.csv")), read(d.join("c/train_01.csv")));
}

#[test]
fn unwritable_output_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&["synth", "--out", "file/sub"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(run(&["--k-sigma", "-1", "run", "--out", "o"], d).status.code(), Some(2));
    fs::write(d.join("bad.toml"), "seed = \"seven\"\n").unwrap();
    assert_eq!(run(&["--config", "bad.toml", "run", "--out", "o"], d).status.code(), Some(2));
    assert_eq!(run(&["run", "--out", "o", "--mode", "sideways"], d).status.code(), Some(2));
    assert!(!d.join("o").exists());
}

#[test]
fn run_is_reproducible_and_evaluate_agrees() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(&["--config", "small.toml", "run", "--out", "o1"], d);
    ok(&["--config", "small.toml", "run", "--out", "o2"], d);
    for f in ["predictions.csv", "metrics.csv", "ranking.csv", "models/ensemble_full_k2.json"] {
        assert_eq!(read(d.join("o1").join(f)), read(d.join("o2").join(f)), "{f}");
    }
    assert!(!d.join("o1/INCOMPLETE").exists());
    ok(&["--config", "small.toml", "evaluate", "--predictions", "o1/predictions.csv", "--out", "m.csv"], d);
    assert_eq!(read(d.join("m.csv")), read(d.join("o1/metrics.csv")));
}

#[test]
fn two_k_values_give_two_rows_per_run_and_mode() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_config(d);
    let out = ok(
        &["--config", "small.toml", "--k-sigma", "2", "--k-sigma", "3", "--mode", "segment", "run", "--out", "o"],
        d,
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{text}");
    assert_eq!(rows.iter().filter(|r| r.contains(",2,segment,")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.contains(",3,segment,")).count(), 2);
    assert!(d.join("o/onsets/test_01_k3.txt").exists());
}

#[test]
fn healthy_test_run_falls_back_and_is_scored() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(&["synth", "--out", "runs", "--n-train", "4", "--n-test", "0"], d);
    ok(&["synth", "--out", "h", "--suite", "healthy", "--n-train", "1", "--n-test", "0"], d);
    fs::copy(d.join("h/train_01.csv"), d.join("runs/zz_healthy.csv")).unwrap();
    let out = ok(
        &["--config", "small.toml", "--runs", "runs", "--test-runs", "zz_healthy", "run", "--out", "o"],
        d,
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("zz_healthy,2,segment,"), "{text}");
    let rec = String::from_utf8(read(d.join("o/onsets/zz_healthy_k2.txt"))).unwrap();
    assert!(rec.contains("used_fallback = true"), "{rec}");
    assert!(rec.contains("onset = none"));
}

#[test]
fn rank_without_features_is_a_clean_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("runs")).unwrap();
    fs::write(d.join("runs/r1.csv"), "t\n0\n1\n2\n").unwrap();
    let out = run(&["--runs", "runs", "rank", "--out", "rank.csv"], d);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(101), "panicked");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn staged_commands_match_run() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(&["--config", "small.toml", "run", "--out", "full"], d);
    ok(&["--config", "small.toml", "train-forecaster", "--out", "s"], d);
    assert_eq!(read(d.join("s/models/forecaster.json")), read(d.join("full/models/forecaster.json")));
    ok(&["--config", "small.toml", "detect", "--models", "s/models", "--out", "s"], d);
    assert_eq!(
        read(d.join("s/onsets/test_01_k2.txt")),
        read(d.join("full/onsets/test_01_k2.txt"))
    );
    ok(&["--config", "small.toml", "train-ensemble", "--models", "s", "--out", "s"], d);
    assert_eq!(
        read(d.join("s/models/ensemble_segment_k2.json")),
        read(d.join("full/models/ensemble_segment_k2.json"))
    );
}

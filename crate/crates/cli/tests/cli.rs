use std::path::Path;
use std::process::{Command, Output};

use aaaseg_cli::RunManifest;

fn aaaseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aaaseg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn aaaseg")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = aaaseg(dir, args);
    assert!(
        out.status.success(),
        "aaaseg {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn missing_cohort_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = aaaseg(dir.path(), &["train", "--cohort", "no_such_cohort", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_cohort"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = aaaseg(dir.path(), &["evaluate", "--pred", "p"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_evaluate_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--n", "4", "--seed", "3", "--out", "cohort"]);
    let m = RunManifest::read(&d.join("cohort/run_manifest.json")).unwrap();
    assert_eq!(m.command, "phantom");
    assert_eq!(m.seed, 3);

    // ground truth scored against itself
    let out = ok(d, &["evaluate", "--pred", "cohort", "--gt", "cohort", "--pred-suffix", "_mask", "--out", "r.csv"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("dice 1.0000"));
    assert!(d.join("r.csv.manifest.json").is_file());

    ok(d, &["report", "--input", "r.csv"]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r.csv.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["dice"]["all"]["mean"], 1.0);
    assert_eq!(summary["dice"]["all"]["n"], 4);
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# cohort\nn = 2\nseed = 9\n").unwrap();
    ok(d, &["--config", "run.cfg", "phantom", "--out", "a"]);
    let m = RunManifest::read(&d.join("a/run_manifest.json")).unwrap();
    assert_eq!((m.seed, m.parameters["n"].as_u64()), (9, Some(2)));

    ok(d, &["--config", "run.cfg", "phantom", "--n", "1", "--out", "b"]);
    let m = RunManifest::read(&d.join("b/run_manifest.json")).unwrap();
    assert_eq!(m.parameters["n"].as_u64(), Some(1));

    std::fs::write(d.join("bad.cfg"), "epochz = 3\n").unwrap();
    let out = aaaseg(d, &["--config", "bad.cfg", "phantom", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_predict_writes_masks_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--n", "2", "--seed", "4", "--out", "cohort"]);
    ok(
        d,
        &[
            "train", "--cohort", "cohort", "--out", "m.ckpt", "--epochs", "1", "--crops-per-scan", "1",
            "--transforms-per-crop", "1",
        ],
    );
    assert!(d.join("m.ckpt.history.csv").is_file());
    let m = RunManifest::read(&d.join("m.ckpt.manifest.json")).unwrap();
    assert_eq!(m.command, "train");

    ok(d, &["predict", "--checkpoint", "m.ckpt", "--input", "cohort", "--out", "pred"]);
    for id in ["case_0000", "case_0001"] {
        assert!(d.join(format!("pred/{id}_pred.mha")).is_file());
        assert!(d.join(format!("pred/{id}_prob.mha")).is_file());
    }
    assert!(d.join("pred/run_manifest.json").is_file());
    ok(d, &["evaluate", "--pred", "pred", "--gt", "cohort", "--out", "r.csv"]);

    let out = aaaseg(d, &["predict", "--checkpoint", "missing.ckpt", "--input", "cohort", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--instances", "5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("conv3d"));
    let csv = std::fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 15);
}

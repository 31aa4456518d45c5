//! End-to-end checks of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn eagle(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eagle"))
        .args(args)
        .current_dir(dir)
        .env_remove("EAGLE_OUT_DIR")
        .output()
        .expect("binary runs")
}

#[test]
fn train_writes_metrics_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eagle(
        &[
            "train",
            "--optimizer",
            "eagle",
            "--dataset",
            "iris",
            "--epochs",
            "5",
            "--seed",
            "3",
            "--out",
            "run",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = tmp.path().join("run");
    let metrics = std::fs::read_to_string(run.join("metrics_eagle_3.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 5);
    assert!(run.join("checkpoint_eagle_3.bin").exists());
    assert!(run.join("manifest.json").exists());

    let effective = std::fs::read_to_string(run.join("effective_config.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&effective).unwrap();
    assert_eq!(parsed["epochs"], 5);
    assert_eq!(parsed["dataset"], "iris");
}

#[test]
fn zero_epochs_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eagle(&["train", "--epochs", "0", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
}

#[test]
fn bad_config_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{"dataset":"iris","bogus":1}"#,
    )
    .unwrap();
    let out = eagle(
        &["train", "--config", "cfg.json", "--out", "run"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infinite_threshold_reproduces_adam_loss_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let common = ["--dataset", "iris", "--epochs", "4", "--seed", "2"];
    let a = eagle(
        &[
            &[
                "train",
                "--optimizer",
                "eagle",
                "--threshold",
                "inf",
                "--out",
                "e",
            ],
            &common[..],
        ]
        .concat(),
        tmp.path(),
    );
    let b = eagle(
        &[&["train", "--optimizer", "adam", "--out", "a"], &common[..]].concat(),
        tmp.path(),
    );
    assert!(a.status.success() && b.status.success());
    let ea = std::fs::read_to_string(tmp.path().join("e/metrics_eagle_2.csv")).unwrap();
    let ad = std::fs::read_to_string(tmp.path().join("a/metrics_adam_2.csv")).unwrap();
    for (le, la) in ea.lines().zip(ad.lines()).skip(1) {
        let fe: Vec<&str> = le.split(',').collect();
        let fa: Vec<&str> = la.split(',').collect();
        // epoch, train_loss, train_acc, test_loss, test_acc agree exactly
        assert_eq!(fe[..5], fa[..5]);
    }
}

#[test]
fn env_var_supplies_output_dir_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{"dataset":"iris","optimizer":"eagle","eagle":{},"sgd":{},
            "epochs":2,"seeds":[1],"split":{"train_fraction":0.8,"standardize":true},
            "output_dir":"","thresholds":[1e-3],"metric3_epochs":[1],"landscape":{
            "sweep_half_width":5.0,"n_points":1000,"scan_seed":0}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eagle"))
        .args(["train", "--config", "cfg.json"])
        .current_dir(tmp.path())
        .env("EAGLE_OUT_DIR", "envout")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("envout/metrics_eagle_1.csv").exists());
}

#[test]
fn landscape_runs_on_a_trained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let train = eagle(
        &[
            "train",
            "--optimizer",
            "eagle",
            "--dataset",
            "iris",
            "--epochs",
            "3",
            "--seed",
            "1",
            "--out",
            "run",
        ],
        tmp.path(),
    );
    assert!(train.status.success());
    // a config shrinking the scan so the test stays fast
    std::fs::write(
        tmp.path().join("scan.json"),
        r#"{"dataset":"iris","optimizer":"eagle","eagle":{},"sgd":{},
            "epochs":3,"seeds":[1],"split":{"train_fraction":0.8,"standardize":true},
            "output_dir":"scan","thresholds":[1e-3],"metric3_epochs":[1],"landscape":{
            "samples_per_layer":[2,1],"sweep_half_width":5.0,"n_points":100,"scan_seed":7}}"#,
    )
    .unwrap();
    let scan = eagle(
        &[
            "landscape",
            "--config",
            "scan.json",
            "--checkpoint",
            "run/checkpoint_eagle_1.bin",
        ],
        tmp.path(),
    );
    assert!(
        scan.status.success(),
        "{}",
        String::from_utf8_lossy(&scan.stderr)
    );
    let shapes = std::fs::read_to_string(tmp.path().join("scan/shapes.csv")).unwrap();
    assert_eq!(shapes.lines().count(), 1 + 3);
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eagle(&["selftest"], tmp.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all checks passed"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

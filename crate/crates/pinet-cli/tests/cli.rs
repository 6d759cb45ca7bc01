//! End-to-end tests of the command-line stages: staged execution must match
//! the end-to-end runner, reports must regenerate byte-identically, and
//! artifact mismatches must fail loudly.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pinet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, contents: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, contents).unwrap();
    path
}

const SMALL_CONFIG: &str = r#"{
    "data": {"type": "synthetic", "dim": 3, "signal_dims": 2, "n": 800},
    "split": [0.5, 0.25, 0.25],
    "standardize": true,
    "network": {"type": "mlp", "hidden": [12]},
    "train": {"epochs": 40, "batch_size": 32},
    "methods": ["conf-nn", "conf-fw", "pav", "neg-ll", "oracle"],
    "alpha": 0.1,
    "grid": [0.1, 0.05, 0.0],
    "seed": 11
}"#;

#[test]
fn staged_stages_match_end_to_end_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let staged = dir.path().join("staged");
    let direct = dir.path().join("direct");
    fs::create_dir_all(&staged).unwrap();
    fs::create_dir_all(&direct).unwrap();

    let cfg_s = cfg.to_str().unwrap();
    let staged_s = staged.to_str().unwrap();
    for stage in ["simulate", "train", "calibrate", "evaluate"] {
        assert_ok(&pinet(&[stage, "--config", cfg_s, "--out", staged_s]));
    }
    assert_ok(&pinet(&[
        "run",
        "--config",
        cfg_s,
        "--out",
        direct.to_str().unwrap(),
    ]));

    let staged_metrics = fs::read(staged.join("metrics.csv")).unwrap();
    let direct_metrics = fs::read(direct.join("metrics.csv")).unwrap();
    assert_eq!(
        String::from_utf8_lossy(&staged_metrics),
        String::from_utf8_lossy(&direct_metrics)
    );
    for method in ["conf-nn", "conf-fw", "pav", "neg-ll", "oracle"] {
        let s = staged.join(format!("curves/{method}.csv"));
        let d = direct.join(format!("curves/{method}.csv"));
        assert_eq!(
            fs::read(&s).unwrap(),
            fs::read(&d).unwrap(),
            "curve mismatch for {method}"
        );
    }

    // expected artifacts exist
    for f in [
        "dataset.csv",
        "model_conf-nn.json",
        "model_pav.json",
        "model_neg-ll.json",
        "calibration_conf-nn.json",
        "calibration_conf-fw.json",
        "calibration_pav.json",
        "report.json",
    ] {
        assert!(staged.join(f).exists(), "missing {f}");
    }

    // after the calibrate stage the model document embeds its calibration
    let model_doc = fs::read_to_string(staged.join("model_conf-nn.json")).unwrap();
    assert!(
        model_doc.contains("\"calibration\""),
        "model document lacks calibration"
    );
    assert!(model_doc.contains("\"c_hat\""));
    let pav_doc = fs::read_to_string(staged.join("model_pav.json")).unwrap();
    assert!(pav_doc.contains("\"tau_hat\""));
}

#[test]
fn report_regenerates_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let first = dir.path().join("first");
    assert_ok(&pinet(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--methods",
        "conf-nn,oracle",
    ]));
    let regen = dir.path().join("regen");
    assert_ok(&pinet(&[
        "report",
        "--report",
        first.join("report.json").to_str().unwrap(),
        "--out",
        regen.to_str().unwrap(),
    ]));
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(regen.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("curves/conf-nn.csv")).unwrap(),
        fs::read(regen.join("curves/conf-nn.csv")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(regen.join("report.json")).unwrap()
    );
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        assert_ok(&pinet(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--methods",
            "conf-fw",
        ]));
    }
    assert_ne!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn output_dir_from_config_is_used_when_out_is_absent() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-config");
    let cfg_text = SMALL_CONFIG.replace(
        "\"seed\": 11",
        &format!(
            "\"seed\": 11, \"output_dir\": \"{}\"",
            target.to_str().unwrap().replace('\\', "/")
        ),
    );
    let cfg = write_config(dir.path(), &cfg_text);
    assert_ok(&pinet(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--methods",
        "conf-fw",
    ]));
    assert!(target.join("metrics.csv").exists());

    // neither flag nor config field is an error
    let bare = write_config(&dir.path().join("."), SMALL_CONFIG);
    let out = pinet(&["run", "--config", bare.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("output directory"));
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
        "data": {"type": "csv", "path": "data.csv", "target": "y", "features": ["a"]},
        "split": [0.5, 0.25, 0.25],
        "network": {"type": "mlp", "hidden": [4]},
        "methods": ["oracle"],
        "alpha": 0.1,
        "seed": 1
    }"#,
    );
    let out = pinet(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("oracle"), "stderr: {stderr}");
}

#[test]
fn evaluate_rejects_mismatched_dimensions() {
    // train on a 3-feature dataset, then swap in a 5-feature dataset
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("artifacts");
    fs::create_dir_all(&out_dir).unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out_dir.to_str().unwrap();
    assert_ok(&pinet(&["simulate", "--config", cfg_s, "--out", out_s]));
    assert_ok(&pinet(&["train", "--config", cfg_s, "--out", out_s]));

    let wide_cfg = write_config(
        &dir.path().join("."),
        &SMALL_CONFIG.replace("\"dim\": 3", "\"dim\": 5"),
    );
    let wide_dir = dir.path().join("wide");
    fs::create_dir_all(&wide_dir).unwrap();
    assert_ok(&pinet(&[
        "simulate",
        "--config",
        wide_cfg.to_str().unwrap(),
        "--out",
        wide_dir.to_str().unwrap(),
    ]));
    fs::copy(wide_dir.join("dataset.csv"), out_dir.join("dataset.csv")).unwrap();

    let out = pinet(&["calibrate", "--config", cfg_s, "--out", out_s]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("shape mismatch") || stderr.contains("expected"),
        "stderr: {stderr}"
    );
}

#[test]
fn missing_artifact_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("artifacts");
    fs::create_dir_all(&out_dir).unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out_dir.to_str().unwrap();
    assert_ok(&pinet(&["simulate", "--config", cfg_s, "--out", out_s]));
    assert_ok(&pinet(&["train", "--config", cfg_s, "--out", out_s]));

    // corrupt the stored model's format version
    let model_path = out_dir.join("model_conf-nn.json");
    let text = fs::read_to_string(&model_path).unwrap();
    fs::write(
        &model_path,
        text.replace("\"format_version\": 1", "\"format_version\": 9"),
    )
    .unwrap();
    let out = pinet(&["calibrate", "--config", cfg_s, "--out", out_s]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("format version"), "stderr: {stderr}");
}

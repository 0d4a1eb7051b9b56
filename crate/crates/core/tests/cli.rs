use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn blescope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blescope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = blescope(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a three-phone dataset and writes an experiment config for it.
fn setup(dir: &Path) {
    write(
        &dir.join("simulate.json"),
        &json!({
            "phones": [0, 3, 9],
            "run_seconds": 30,
            "train_seconds": 30,
            "val_seconds": 15,
            "test_seconds": 15,
            "unlabeled_seconds": 20
        }),
    );
    let data = dir.join("data");
    let out = ok(&[
        "simulate",
        "--config",
        s(&dir.join("simulate.json")),
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    assert!(out.contains("wrote 12 runs"), "{out}");
    write(
        &dir.join("experiment.json"),
        &json!({
            "manifest": "data/manifest.json",
            "training": {
                "known_brands": ["Apple", "Samsung"],
                "target_brand": "Apple",
                "locnet": {"lstm_layers": 1, "hidden": 4, "dense_hidden": 4},
                "transnet": {"channels": [4, 2, 1], "kernel": 3, "zero_init_output": true},
                "phase1": {"epochs": 1, "lr": 0.001, "batch_size": 16},
                "phase2": {"epochs": 1, "lr": 0.0001, "batch_size": 16},
                "augment": null,
                "seed": 1
            },
            "knn_k": 3
        }),
    );
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    setup(dir);
    let manifest = dir.join("data/manifest.json");
    let config = dir.join("experiment.json");

    let stats_out = dir.join("stats");
    let table = ok(&["stats", "--config", s(&manifest), "--out", s(&stats_out)]);
    assert!(table.contains("iPhone"), "{table}");
    assert!(stats_out.join("stat_apple.csv").exists());
    assert!(stats_out.join("stat_samsung.csv").exists());

    for scenario in ["1", "2", "3"] {
        let out = dir.join(format!("s{scenario}"));
        ok(&[
            "train",
            "--scenario",
            scenario,
            "--config",
            s(&config),
            "--out",
            s(&out),
        ]);
        assert!(out.join("model.json").exists());
        let report: Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["scenario"], json!(scenario.parse::<u8>().unwrap()));

        let eval_out = dir.join(format!("eval{scenario}"));
        let table = ok(&[
            "evaluate",
            "--config",
            s(&config),
            "--model",
            s(&out.join("model.json")),
            "--out",
            s(&eval_out),
        ]);
        assert!(table.contains("overall"), "{table}");
        assert!(eval_out.join("report.json").exists());
        assert!(eval_out.join("cdf.csv").exists());
    }

    let knn_out = dir.join("knn");
    let table = ok(&[
        "baseline",
        "knn",
        "--config",
        s(&config),
        "--out",
        s(&knn_out),
    ]);
    assert!(table.contains("knn (k=3)"), "{table}");
}

#[test]
fn training_is_reproducible_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    setup(dir);
    let config = dir.join("experiment.json");
    for out in ["a", "b"] {
        ok(&[
            "train",
            "--scenario",
            "2",
            "--config",
            s(&config),
            "--out",
            s(&dir.join(out)),
        ]);
    }
    let a = fs::read(dir.join("a/model.json")).unwrap();
    let b = fs::read(dir.join("b/model.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let config = dir.join("bad.json");
    write(
        &config,
        &json!({
            "manifest": "missing/manifest.json",
            "training": {"known_brands": ["Apple"], "target_brand": "Samsung"}
        }),
    );
    let out = blescope(&[
        "train",
        "--scenario",
        "2",
        "--config",
        s(&config),
        "--out",
        s(&dir.join("o")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = blescope(&[
        "train",
        "--scenario",
        "4",
        "--config",
        s(&config),
        "--out",
        s(&dir.join("o")),
    ]);
    assert!(!out.status.success());

    let out = blescope(&[
        "simulate",
        "--config",
        s(&dir.join("absent.json")),
        "--out",
        s(&dir.join("o")),
    ]);
    assert!(!out.status.success());
}

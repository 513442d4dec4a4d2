//! Full command-line walkthrough: every subcommand in pipeline order on a
//! small corpus.

use std::path::Path;
use std::process::Command;

fn shapmark() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapmark"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn shapmark");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn pipeline_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let s = |path: &Path| path.to_str().unwrap().to_string();

    run_ok(shapmark().args([
        "gen-data",
        "--samples",
        "900",
        "--features",
        "8",
        "--informative",
        "8",
        "--separation",
        "6.0",
        "--int-fraction",
        "1.0",
        "--seed",
        "5",
        "--out",
        &s(&p("data.csv")),
    ]));
    assert!(p("data.csv").exists());
    assert!(p("data.csv.spec.json").exists());

    run_ok(shapmark().args([
        "train",
        "--data",
        &s(&p("data.csv")),
        "--spec",
        &s(&p("data.csv.spec.json")),
        "--kind",
        "gradient_boosted_trees",
        "--seed",
        "5",
        "--out",
        &s(&p("model.json")),
    ]));

    run_ok(shapmark().args([
        "explain",
        "--data",
        &s(&p("data.csv")),
        "--spec",
        &s(&p("data.csv.spec.json")),
        "--model",
        &s(&p("model.json")),
        "--method",
        "kernel",
        "--samples",
        "24",
        "--background",
        "6",
        "--out",
        &s(&p("shap.csv")),
    ]));

    run_ok(shapmark().args([
        "attack",
        "--data",
        &s(&p("data.csv")),
        "--spec",
        &s(&p("data.csv.spec.json")),
        "--shap",
        &s(&p("shap.csv")),
        "--strategy",
        "independent",
        "--size",
        "3",
        "--out",
        &s(&p("trigger.json")),
    ]));

    run_ok(shapmark().args([
        "poison",
        "--data",
        &s(&p("data.csv")),
        "--spec",
        &s(&p("data.csv.spec.json")),
        "--trigger",
        &s(&p("trigger.json")),
        "--fraction",
        "0.02",
        "--seed",
        "9",
        "--out",
        &s(&p("poisoned.csv")),
        "--plan",
        &s(&p("plan.json")),
    ]));

    let metrics = run_ok(shapmark().args([
        "evaluate",
        "--data",
        &s(&p("data.csv")),
        "--spec",
        &s(&p("data.csv.spec.json")),
        "--model",
        &s(&p("model.json")),
    ]));
    assert!(metrics.contains("accuracy"));

    run_ok(shapmark().args([
        "defend",
        "--data",
        &s(&p("poisoned.csv")),
        "--spec",
        &s(&p("poisoned.csv.spec.json")),
        "--trusted",
        &s(&p("data.csv")),
        "--trusted-spec",
        &s(&p("data.csv.spec.json")),
        "--kind",
        "gradient_boosted_trees",
        "--defense",
        "isolation_forest",
        "--plan",
        &s(&p("plan.json")),
        "--out",
        &s(&p("filter.json")),
    ]));
    let filter: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("filter.json")).unwrap()).unwrap();
    assert!(filter.get("removed_ids").is_some());
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "unknown_key": true}"#).unwrap();
    let out = shapmark()
        .args([
            "experiment",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_cells_exit_with_code_two_and_write_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "schema_version": 1,
        "dataset": {"synthetic": {
            "n_samples": 500, "n_features": 6, "n_informative": 6,
            "benign_subpopulations": 2, "class_separation": 6.0,
            "integer_feature_fraction": 1.0, "seed": 0
        }},
        "split": {"train_fraction": 0.8, "seed": 0, "stratified": true},
        "victim": {"kind": "logistic_regression", "seed": 0},
        "selector": {"feature_selector": "large_abs_shap",
                     "value_selector": "min_population", "trigger_size": 2},
        "strategy": "independent",
        "explainer": {"method": "linear", "n_coalition_samples": 16,
                      "background_size": 6},
        "poison_fractions": [0.02],
        "trigger_sizes": [2, 40],
        "n_seeds": 1,
        "base_seed": 3
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = shapmark()
        .args([
            "experiment",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // partial results still written
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"error\""));
}

#[test]
fn experiment_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "schema_version": 1,
        "dataset": {"synthetic": {
            "n_samples": 500, "n_features": 6, "n_informative": 6,
            "benign_subpopulations": 2, "class_separation": 6.0,
            "integer_feature_fraction": 1.0, "seed": 0
        }},
        "split": {"train_fraction": 0.8, "seed": 0, "stratified": true},
        "victim": {"kind": "logistic_regression", "seed": 0},
        "selector": {"feature_selector": "large_abs_shap",
                     "value_selector": "min_population", "trigger_size": 2},
        "strategy": "independent",
        "explainer": {"method": "linear", "n_coalition_samples": 16,
                      "background_size": 6},
        "poison_fractions": [0.02],
        "trigger_sizes": [2],
        "n_seeds": 1,
        "base_seed": 3
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = shapmark()
        .args([
            "experiment",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("report.csv").exists());

    run_ok(shapmark().args([
        "report",
        "--input",
        out_dir.join("report.json").to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        out_dir.join("converted.csv").to_str().unwrap(),
    ]));
    assert!(out_dir.join("converted.csv").exists());
}

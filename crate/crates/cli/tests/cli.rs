use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsurv::data::Dataset;
use qsurv::model::{Architecture, HazardModel};
use qsurv::quadrature;

fn qsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsurv")).args(args).output().expect("spawn qsurv")
}

fn ok(args: &[&str]) -> String {
    let out = qsurv(args);
    assert!(
        out.status.success(),
        "qsurv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates scenario 1 and trains a short run. Returns (data dir, model dir).
fn small_pipeline(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let model = root.join("model");
    ok(&["simulate", "--family", "scenario1", "--n-train", "300", "--n-test", "200", "--seed", "3", "--out", s(&data)]);
    let config = root.join("config.json");
    fs::write(&config, r#"{"max_epochs": 3, "hidden": [16, 16]}"#).unwrap();
    ok(&["train", "--config", s(&config), "--train", s(&data.join("train.csv")), "--out", s(&model)]);
    (data, model)
}

#[test]
fn simulate_writes_datasets_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    ok(&["simulate", "--family", "exponential", "--seed", "1", "--out", s(&out)]);
    let train = Dataset::from_csv(fs::File::open(out.join("train.csv")).unwrap()).unwrap();
    let test = Dataset::from_csv(fs::File::open(out.join("test.csv")).unwrap()).unwrap();
    assert_eq!((train.len(), test.len()), (2000, 2000));
    let censored = 1.0 - train.event_count() as f64 / train.len() as f64;
    assert!((censored - 0.20).abs() <= 0.03, "{censored}");
    let truth = fs::read_to_string(out.join("truth.csv")).unwrap();
    assert!(truth.starts_with("t,lambda,cumhaz,survival,group"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a_data, a_model) = small_pipeline(&dir.path().join("a"));
    let (b_data, b_model) = small_pipeline(&dir.path().join("b"));
    for f in ["train.csv", "test.csv", "truth.csv"] {
        assert_eq!(fs::read(a_data.join(f)).unwrap(), fs::read(b_data.join(f)).unwrap(), "{f}");
    }
    for f in ["checkpoint.json", "architecture.json", "training_log.ndjson", "config.json"] {
        assert_eq!(fs::read(a_model.join(f)).unwrap(), fs::read(b_model.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_family_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qsurv(&["simulate", "--family", "cauchy", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cauchy"));
    assert_eq!(qsurv(&["train"]).status.code(), Some(2));
}

#[test]
fn invalid_order_and_bad_schema_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "x,time,event\n0.5,1.0,1\n0.1,abc,0\n").unwrap();
    let out = qsurv(&["train", "--train", s(&csv), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`time`") && err.contains("line 3"), "{err}");

    fs::write(&csv, "x,time,event\n0.5,1.0,1\n0.1,2.0,0\n").unwrap();
    let out = qsurv(&["train", "--k-nodes", "0", "--train", s(&csv), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&csv, "x,time,event\n0.5,1.0,0\n0.1,2.0,0\n0.3,2.5,0\n").unwrap();
    let out = qsurv(&["train", "--train", s(&csv), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("censored"));
}

#[test]
fn evaluate_and_predict_agree_with_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let report_path = dir.path().join("report.json");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&model.join("checkpoint.json")),
        "--test",
        s(&data.join("test.csv")),
        "--train",
        s(&data.join("train.csv")),
        "--out",
        s(&report_path),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    for h in ["full", "q1", "q2"] {
        for m in ["ctd", "ibs", "ibll"] {
            assert!(report[h][m].as_f64().unwrap().is_finite(), "{h}.{m}");
        }
    }
    let p = report["dcal_p"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(dir.path().join("report.json.manifest.json").exists());

    let cov = dir.path().join("cov.csv");
    fs::write(&cov, "x\n0\n1\n").unwrap();
    let curves = dir.path().join("curves.csv");
    ok(&[
        "predict",
        "--checkpoint",
        s(&model.join("checkpoint.json")),
        "--covariates",
        s(&cov),
        "--grid",
        "0:2:21",
        "--out",
        s(&curves),
    ]);
    let arch = Architecture::from_json(&fs::read_to_string(model.join("architecture.json")).unwrap()).unwrap();
    let params = qsurv::autodiff::decode_checkpoint(&fs::read_to_string(model.join("checkpoint.json")).unwrap()).unwrap();
    let lib = HazardModel::from_parameters(arch.clone(), params).unwrap();
    let rule = quadrature::rule(arch.k_nodes).unwrap();
    let mut rdr = csv::Reader::from_path(&curves).unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 42);
    for row in &rows {
        let (t, hazard, cumhaz, surv) = (row[1], row[2], row[3], row[4]);
        if t == 0.0 {
            assert_eq!(surv, 1.0);
        }
        assert!((-surv.ln() - cumhaz).abs() < 1e-9);
        assert!(hazard > 0.0);
    }
    let spot = &rows[21 + 13];
    let x = [1.0];
    assert!((spot[2] - lib.hazard(&x, spot[1]).unwrap()).abs() < 1e-12);
    assert!((spot[3] - lib.cumulative_hazard(&x, spot[1], &rule).unwrap()).abs() < 1e-9);
}

#[test]
fn covariate_dimension_mismatch_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = small_pipeline(dir.path());
    let cov = dir.path().join("cov.csv");
    fs::write(&cov, "age,bmi\n1,2\n").unwrap();
    let out = qsurv(&[
        "predict",
        "--checkpoint",
        s(&model.join("checkpoint.json")),
        "--covariates",
        s(&cov),
        "--grid",
        "0.5,1",
        "--out",
        s(&dir.path().join("c.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
}

#[test]
fn single_cell_sweep_and_single_trial_search() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"max_epochs": 2, "hidden": [16, 16]}"#).unwrap();
    let sweep = dir.path().join("sweep.csv");
    ok(&[
        "sweep-nodes",
        "--family",
        "scenario2",
        "--ks",
        "3",
        "--seeds",
        "0",
        "--n-train",
        "200",
        "--n-test",
        "100",
        "--config",
        s(&config),
        "--out",
        s(&sweep),
    ]);
    let text = fs::read_to_string(&sweep).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k_nodes,seed,iae_survival,iae_cumhaz,iae_hazard,train_seconds,error"
    );
    let cell: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&cell[..2], &["3", "0"]);
    assert!(cell[4].parse::<f64>().unwrap() > 0.0);

    let data = dir.path().join("data");
    ok(&["simulate", "--family", "scenario1", "--n-train", "200", "--n-test", "10", "--out", s(&data)]);
    let space = dir.path().join("space.json");
    fs::write(&space, r#"{"hidden": [16], "layers": [2]}"#).unwrap();
    let hpo = dir.path().join("hpo");
    ok(&[
        "hpo",
        "--space",
        s(&space),
        "--trials",
        "1",
        "--train",
        s(&data.join("train.csv")),
        "--config",
        s(&config),
        "--out",
        s(&hpo),
    ]);
    let trials = fs::read_to_string(hpo.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 2);
    assert!(hpo.join("checkpoint.json").exists() && hpo.join("best_config.json").exists());
}

#[test]
fn dump_rule_lists_nodes_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rule.json");
    ok(&["dump-rule", "--k-nodes", "3", "--out", s(&out)]);
    let rule: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rule["K"], 3);
    let weights: f64 = rule["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
    assert!((weights - 2.0).abs() < 1e-14);
    let middle = rule["nodes"][1].as_f64().unwrap();
    assert_eq!(middle, 0.0);
    assert_eq!(qsurv(&["dump-rule", "--k-nodes", "65", "--out", s(&out)]).status.code(), Some(2));
}

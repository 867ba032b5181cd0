use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use tpis_cli::api::step_one_document;
use tpis_cli::service::{router, AppState};
use tpis_core::storage::{load_model, read_dataset};

fn tpis(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpis"))
        .args(args)
        .current_dir(dir)
        .env_remove("TPIS_CONFIG")
        .env_remove("TPIS_MODEL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A directory holding `cohort.csv` and `model.json`.
fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = tpis(&["synth", "--out", "cohort.csv", "--seed", "7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tpis(&["train", "--data", "cohort.csv", "--out", "model.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn synth_writes_a_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpis(&["synth", "--out", "c.csv", "--seed", "3"], dir.path());
    assert!(o.status.success());
    let d = read_dataset(&dir.path().join("c.csv")).unwrap();
    assert_eq!(d.len(), 199);

    tpis(&["synth", "--out", "d.csv", "--seed", "3"], dir.path());
    let a = std::fs::read(dir.path().join("c.csv")).unwrap();
    let b = std::fs::read(dir.path().join("d.csv")).unwrap();
    assert_eq!(a, b);

    tpis(&["synth", "--out", "e.csv", "--n", "40", "--no-missing"], dir.path());
    let e = read_dataset(&dir.path().join("e.csv")).unwrap();
    assert_eq!(e.len(), 40);
    assert!(e.records().iter().all(|r| r.step1.values().iter().all(Option::is_some)));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["synth", "--bogus"][..], &["frobnicate"], &["eval", "--runs", "many"], &["synth"]] {
        let o = tpis(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = tpis(&["compare", "--fs", "FS9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpis(&["train", "--data", "missing.csv", "--out", "m.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));

    std::fs::write(dir.path().join("bad.toml"), "sead = 1\n").unwrap();
    let o = tpis(&["synth", "--out", "x.csv", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[config]"));

    std::fs::write(dir.path().join("bad.csv"), "id,label\n1,TB\n").unwrap();
    let o = tpis(&["train", "--data", "bad.csv", "--out", "m.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 5\n[paths]\nout = \"from-config.csv\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tpis"))
        .args(["synth", "--n", "30"])
        .current_dir(dir.path())
        .env("TPIS_CONFIG", "run.toml")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_dataset(&dir.path().join("from-config.csv")).unwrap().len(), 30);
}

#[test]
fn workflow_reports_routing_and_accuracy() {
    let dir = trained();
    let o = tpis(
        &["workflow", "--model", "model.json", "--data", "cohort.csv", "--outcomes", "out.csv", "--json", "r.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("routed"));
    assert!(text.contains("aggregate accuracy"));
    let outcomes = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(outcomes.lines().count(), 200);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["evaluated"], 199);

    // At threshold 0 only undetermined votes are routed.
    let o = tpis(
        &["workflow", "--model", "model.json", "--data", "cohort.csv", "--threshold", "0", "--outcomes", "t0.csv"],
        dir.path(),
    );
    assert!(o.status.success());
    let rows = std::fs::read_to_string(dir.path().join("t0.csv")).unwrap();
    for line in rows.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[4] == "true", cells[2] == "undetermined", "{line}");
    }
}

#[test]
fn training_is_reproducible() {
    let dir = trained();
    let o = tpis(&["train", "--data", "cohort.csv", "--out", "again.json"], dir.path());
    assert!(o.status.success());
    let a = std::fs::read(dir.path().join("model.json")).unwrap();
    let b = std::fs::read(dir.path().join("again.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn diagnose_matches_the_service() {
    let dir = trained();
    let cohort = read_dataset(&dir.path().join("cohort.csv")).unwrap();
    let model = load_model(&dir.path().join("model.json")).unwrap();
    let state: Arc<AppState> = AppState::new(Some(model), Duration::from_secs(60)).unwrap();
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();

    for rec in cohort.records().iter().take(5) {
        let doc = step_one_document(&rec.step1);
        std::fs::write(dir.path().join("input.json"), doc.to_string()).unwrap();
        let o = tpis(&["diagnose", "--model", "model.json", "--input", "input.json"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let cli: Value = serde_json::from_str(&stdout(&o)).unwrap();

        let by_id = tpis(&["diagnose", "--model", "model.json", "--data", "cohort.csv", "--id", &rec.id], dir.path());
        let by_id: Value = serde_json::from_str(&stdout(&by_id)).unwrap();
        assert_eq!(by_id["step1"], cli["step1"]);

        let http: Value = rt.block_on(async {
            let req = Request::post("/v1/step1").body(Body::from(doc.to_string())).unwrap();
            let resp = router(state.clone()).oneshot(req).await.unwrap();
            serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap()
        });
        assert_eq!(cli["step1"], http);
    }

    let o = tpis(&["diagnose", "--model", "model.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = tpis(&["diagnose", "--model", "model.json", "--data", "cohort.csv", "--id", "nobody"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_prints_the_early_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpis(&["compare", "--fs", "FS1", "--runs", "3", "--csv", "t.csv", "--roc", "roc.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    for name in ["DT", "LR", "SVM", "RF", "AdaBoost", "GBT", "TPIS step 1, layer 1", "TPIS step 1, layer 2"] {
        assert!(stdout(&o).contains(name), "{name} missing");
    }
    assert!(std::fs::read_to_string(dir.path().join("roc.csv")).unwrap().lines().count() > 8);
}

#[test]
fn eval_runs_one_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpis(&["eval", "--recipe", "lr", "--fs", "FS2", "--runs", "4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("4 runs") && text.contains("accuracy") && text.contains("auc"), "{text}");
}

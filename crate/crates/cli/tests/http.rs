use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use tpis_cli::api::{step_one_document, step_two_document};
use tpis_cli::service::{router, AppState};
use tpis_core::domain::{Dataset, PatientRecord};
use tpis_core::pipeline::{fit_tpis, TpisConfig, TpisModel};
use tpis_core::synthgen::{default_spec, sample_cohort};

fn cohort() -> &'static Dataset {
    static C: OnceLock<Dataset> = OnceLock::new();
    C.get_or_init(|| sample_cohort(&default_spec(), 199, 7, true).unwrap())
}

fn model(seed: u64) -> TpisModel {
    static A: OnceLock<TpisModel> = OnceLock::new();
    static B: OnceLock<TpisModel> = OnceLock::new();
    let cell = if seed == 0 { &A } else { &B };
    cell.get_or_init(|| fit_tpis(cohort(), &TpisConfig::with_seed(seed)).unwrap()).clone()
}

fn state(seed: Option<u64>) -> Arc<AppState> {
    AppState::new(seed.map(model), Duration::from_secs(600)).unwrap()
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn patient(i: usize) -> &'static PatientRecord {
    &cohort().records()[i]
}

fn with_labs() -> impl Iterator<Item = &'static PatientRecord> {
    cohort().records().iter().filter(|r| r.observed_step2().is_some())
}

#[tokio::test]
async fn step1_returns_label_and_score() {
    let s = state(Some(0));
    for i in 0..10 {
        let (status, body) = call(&s, "POST", "/v1/step1", Some(step_one_document(&patient(i).step1))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let cs = body["cs"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&cs));
        assert!(["TB", "P", "undetermined"].contains(&body["label"].as_str().unwrap()));
        assert_eq!(body["meta2"].as_array().unwrap().len(), 5);
        let tally = &body["tally"];
        assert!(tally["tb"].as_u64().unwrap() + tally["p"].as_u64().unwrap() >= 1);
    }
}

#[tokio::test]
async fn missing_field_is_named() {
    let s = state(Some(0));
    let mut doc = step_one_document(&patient(0).step1);
    doc.as_object_mut().unwrap().remove("weight_loss");
    let (status, body) = call(&s, "POST", "/v1/step1", Some(doc)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["missing"], json!(["weight_loss"]));

    let (status, _) = call(&s, "POST", "/v1/step1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn out_of_range_value_names_the_field() {
    let s = state(Some(0));
    let mut doc = step_one_document(&patient(0).step1);
    doc["fever"] = json!(3);
    let (status, body) = call(&s, "POST", "/v1/step1", Some(doc)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "fever");
}

#[tokio::test]
async fn no_model_is_unavailable() {
    let s = state(None);
    let (status, body) = call(&s, "GET", "/health", None).await;
    assert_eq!((status, &body["model_loaded"]), (StatusCode::OK, &json!(false)));
    let (status, _) = call(&s, "POST", "/v1/step1", Some(step_one_document(&patient(0).step1))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(&s, "GET", "/v1/model", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn model_info_lists_layers() {
    let s = state(Some(0));
    let (status, body) = call(&s, "GET", "/v1/model", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["layers"]["layer1"], json!(["KNN", "LR", "SVM", "DT", "RF"]));
    assert_eq!(body["step1_fields"].as_array().unwrap().len(), 18);
    assert_eq!(body["step2_fields"].as_array().unwrap().len(), 10);
}

#[tokio::test]
async fn step2_by_session_and_by_meta_agree() {
    let s = state(Some(0));
    let rec = with_labs().next().unwrap();
    let labs = step_two_document(rec.observed_step2().unwrap());
    let (_, first) = call(&s, "POST", "/v1/step1", Some(step_one_document(&rec.step1))).await;

    let by_session = json!({ "session_id": first["session_id"], "features": labs });
    let (status, a) = call(&s, "POST", "/v1/step2", Some(by_session)).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let by_meta = json!({ "meta2": first["meta2"], "features": labs });
    let (status, b) = call(&s, "POST", "/v1/step2", Some(by_meta)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a, b);
    assert!(["TB", "P"].contains(&a["final_label"].as_str().unwrap()));
    assert_eq!(a["votes"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let s = state(Some(0));
    let labs = step_two_document(with_labs().next().unwrap().observed_step2().unwrap());
    let (status, _) = call(&s, "POST", "/v1/step2", Some(json!({ "session_id": "feedbeef", "features": labs }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_expire() {
    let s = AppState::new(Some(model(0)), Duration::from_millis(50)).unwrap();
    let rec = with_labs().next().unwrap();
    let (_, first) = call(&s, "POST", "/v1/step1", Some(step_one_document(&rec.step1))).await;
    assert_eq!(s.session_count(), 1);
    tokio::time::sleep(Duration::from_millis(120)).await;
    let labs = step_two_document(rec.observed_step2().unwrap());
    let (status, _) = call(&s, "POST", "/v1/step2", Some(json!({ "session_id": first["session_id"], "features": labs }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_step2_requests_rejected() {
    let s = state(Some(0));
    let labs = step_two_document(with_labs().next().unwrap().observed_step2().unwrap());
    let cases = [
        json!({ "features": labs }),
        json!({ "meta2": [0.5, 0.5], "features": labs }),
        json!({ "meta2": [0.5, 0.5, 0.5, 0.5, 1.5], "features": labs }),
        json!({ "meta2": [0.5, 0.5, 0.5, 0.5, 0.5], "features": labs, "extra": 1 }),
        json!({ "meta2": [0.5, 0.5, 0.5, 0.5, 0.5] }),
    ];
    for body in cases {
        let (status, _) = call(&s, "POST", "/v1/step2", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
    let mut empty = labs.clone();
    for v in empty.as_object_mut().unwrap().values_mut() {
        *v = Value::Null;
    }
    let (status, _) = call(&s, "POST", "/v1/step2", Some(json!({ "meta2": [0.5, 0.5, 0.5, 0.5, 0.5], "features": empty }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn confident_step1_gets_a_warning() {
    let s = state(Some(0));
    let labs = step_two_document(with_labs().next().unwrap().observed_step2().unwrap());
    let (_, confident) =
        call(&s, "POST", "/v1/step2", Some(json!({ "meta2": [0.9, 0.95, 0.8, 1.0, 0.85], "features": labs }))).await;
    assert_eq!(confident["step1_confident"], json!(true));
    assert!(confident["warning"].is_string());
    let (_, split) =
        call(&s, "POST", "/v1/step2", Some(json!({ "meta2": [0.9, 0.1, 0.8, 0.2, 0.5], "features": labs }))).await;
    assert_eq!(split["step1_confident"], json!(false));
    assert!(split.get("warning").is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_are_deterministic() {
    let s = state(Some(0));
    let doc = step_one_document(&patient(3).step1);
    let (_, expected) = call(&s, "POST", "/v1/step1", Some(doc.clone())).await;
    let handles: Vec<_> = (0..32)
        .map(|_| {
            let (s, doc) = (s.clone(), doc.clone());
            tokio::spawn(async move { call(&s, "POST", "/v1/step1", Some(doc)).await })
        })
        .collect();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body, expected);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn model_swap_is_atomic() {
    let doc = step_one_document(&patient(5).step1);
    let (_, from_a) = call(&state(Some(0)), "POST", "/v1/step1", Some(doc.clone())).await;
    let (_, from_b) = call(&state(Some(1)), "POST", "/v1/step1", Some(doc.clone())).await;
    assert_ne!(from_a["session_id"], from_b["session_id"]);

    let s = state(Some(0));
    let next = model(1);
    let handles: Vec<_> = (0..64)
        .map(|_| {
            let (s, doc) = (s.clone(), doc.clone());
            tokio::spawn(async move { call(&s, "POST", "/v1/step1", Some(doc)).await.1 })
        })
        .collect();
    s.replace_model(next).unwrap();
    for h in handles {
        let body = h.await.unwrap();
        assert!(body == from_a || body == from_b, "response mixes two models: {body}");
    }
    let (_, after) = call(&s, "POST", "/v1/step1", Some(doc)).await;
    assert_eq!(after, from_b);
}

#[tokio::test]
async fn session_from_old_model_is_not_reused() {
    let s = state(Some(0));
    let rec = with_labs().next().unwrap();
    let (_, first) = call(&s, "POST", "/v1/step1", Some(step_one_document(&rec.step1))).await;
    s.replace_model(model(1)).unwrap();
    let labs = step_two_document(rec.observed_step2().unwrap());
    let (status, _) = call(&s, "POST", "/v1/step2", Some(json!({ "session_id": first["session_id"], "features": labs }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

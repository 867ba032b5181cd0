//! HTTP inference service.
//!
//! Handlers read an immutable model snapshot; replacing the model swaps
//! the snapshot under a write lock, so in-flight requests finish on the
//! model they started with. Step-1 results are kept in a TTL-bounded
//! session cache so step 2 can be requested by `session_id`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use serde_json::{json, Value};
use tpis_core::domain::{META_COLUMNS, STEP_ONE_COLUMNS, STEP_TWO_COLUMNS};
use tpis_core::pipeline::TpisModel;
use tpis_core::stacking::VotePanel;
use tpis_core::storage::{model_to_string, MODEL_FORMAT_VERSION};

use crate::api::{self, archive_digest, DocumentError};

pub struct Snapshot {
    pub model: TpisModel,
    pub digest: String,
}

impl Snapshot {
    pub fn new(model: TpisModel) -> tpis_core::Result<Self> {
        let digest = archive_digest(&model_to_string(&model)?);
        Ok(Self { model, digest })
    }
}

struct Session {
    meta2: VotePanel,
    model_digest: String,
    created: Instant,
}

pub struct AppState {
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    sessions: Mutex<HashMap<String, Session>>,
    ttl: Duration,
}

impl AppState {
    pub fn new(model: Option<TpisModel>, ttl: Duration) -> tpis_core::Result<Arc<Self>> {
        let snapshot = model.map(Snapshot::new).transpose()?.map(Arc::new);
        Ok(Arc::new(Self { snapshot: RwLock::new(snapshot), sessions: Mutex::new(HashMap::new()), ttl }))
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Atomically replaces the served model.
    pub fn replace_model(&self, model: TpisModel) -> tpis_core::Result<()> {
        let next = Arc::new(Snapshot::new(model)?);
        *self.snapshot.write().expect("snapshot lock") = Some(next);
        Ok(())
    }

    fn remember(&self, id: &str, meta2: VotePanel, model_digest: &str) {
        let mut sessions = self.sessions.lock().expect("session lock");
        let now = Instant::now();
        sessions.retain(|_, s| now.duration_since(s.created) < self.ttl);
        sessions.insert(
            id.to_string(),
            Session { meta2, model_digest: model_digest.to_string(), created: now },
        );
    }

    fn recall(&self, id: &str, model_digest: &str) -> Option<VotePanel> {
        let mut sessions = self.sessions.lock().expect("session lock");
        let now = Instant::now();
        sessions.retain(|_, s| now.duration_since(s.created) < self.ttl);
        sessions.get(id).filter(|s| s.model_digest == model_digest).map(|s| s.meta2.clone())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/model", get(model_info))
        .route("/v1/step1", post(step1))
        .route("/v1/step2", post(step2))
        .with_state(state)
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let text = serde_json::to_string(body).expect("response bodies serialize");
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn error_response(status: StatusCode, err: &DocumentError) -> Response {
    tracing::info!(status = status.as_u16(), error = %err, "request rejected");
    json_response(status, err)
}

fn no_model() -> Response {
    error_response(StatusCode::SERVICE_UNAVAILABLE, &DocumentError::message("no model loaded"))
}

fn parse_body(body: &Bytes) -> Result<Value, DocumentError> {
    serde_json::from_slice(body).map_err(|e| DocumentError::message(format!("invalid JSON body: {e}")))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    json_response(StatusCode::OK, &json!({ "status": "ok", "model_loaded": state.snapshot().is_some() }))
}

async fn model_info(State(state): State<Arc<AppState>>) -> Response {
    let Some(snap) = state.snapshot() else { return no_model() };
    let m = &snap.model;
    let names = |layer: &tpis_core::stacking::EnsembleLayer| -> Vec<&'static str> {
        layer.learners.iter().map(|l| l.kind().short_name()).collect()
    };
    json_response(
        StatusCode::OK,
        &json!({
            "format_version": MODEL_FORMAT_VERSION,
            "model_digest": snap.digest,
            "seed": m.seed,
            "epsilon": m.policy.epsilon,
            "route_threshold": m.policy.route_threshold,
            "step1_fields": STEP_ONE_COLUMNS,
            "step2_fields": STEP_TWO_COLUMNS,
            "meta_fields": m.manifest.meta,
            "layers": {
                "layer1": names(&m.layer1),
                "layer2": names(&m.layer2),
                "step2": names(&m.step2_layer),
            },
        }),
    )
}

async fn step1(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(snap) = state.snapshot() else { return no_model() };
    let doc = match parse_body(&body) {
        Ok(v) => v,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e),
    };
    let features = match api::parse_step_one(&doc) {
        Ok(f) => f,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e),
    };
    match api::step_one(&snap.model, &snap.digest, &features) {
        Ok(resp) => {
            let meta2 = VotePanel::new(resp.meta2.clone()).expect("model outputs are probabilities");
            state.remember(&resp.session_id, meta2, &snap.digest);
            tracing::info!(label = resp.label, cs = resp.cs, routed = resp.routed, "step 1");
            json_response(StatusCode::OK, &resp)
        }
        Err(e) => error_response(StatusCode::UNPROCESSABLE_ENTITY, &DocumentError::message(e.to_string())),
    }
}

async fn step2(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(snap) = state.snapshot() else { return no_model() };
    let doc = match parse_body(&body) {
        Ok(v) => v,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e),
    };
    let Some(obj) = doc.as_object() else {
        return error_response(StatusCode::BAD_REQUEST, &DocumentError::message("expected a JSON object"));
    };
    let allowed = ["session_id", "meta2", "features"];
    let extra: Vec<String> = obj.keys().filter(|k| !allowed.contains(&k.as_str())).cloned().collect();
    let missing: Vec<String> =
        if obj.contains_key("features") { Vec::new() } else { vec!["features".to_string()] };
    if !extra.is_empty() || !missing.is_empty() {
        let err = DocumentError { missing, extra, ..DocumentError::message("expected session_id or meta2, and features") };
        return error_response(StatusCode::BAD_REQUEST, &err);
    }

    let meta2 = match (obj.get("session_id"), obj.get("meta2")) {
        (Some(Value::String(id)), _) => match state.recall(id, &snap.digest) {
            Some(m) => m,
            None => {
                return error_response(
                    StatusCode::NOT_FOUND,
                    &DocumentError::message(format!("unknown or expired session `{id}`")),
                )
            }
        },
        (Some(_), _) => {
            return error_response(StatusCode::BAD_REQUEST, &DocumentError::message("session_id must be a string"))
        }
        (None, Some(v)) => {
            let probs: Option<Vec<f64>> = v.as_array().and_then(|a| a.iter().map(Value::as_f64).collect());
            let expected = snap.model.layer2.len();
            match probs.map(VotePanel::new) {
                Some(Ok(panel)) if panel.len() == expected => panel,
                _ => {
                    return error_response(
                        StatusCode::BAD_REQUEST,
                        &DocumentError::message(format!(
                            "meta2 must be an array of {expected} probabilities ({})",
                            META_COLUMNS.join(", ")
                        )),
                    )
                }
            }
        }
        (None, None) => {
            let err = DocumentError {
                missing: vec!["session_id".into(), "meta2".into()],
                ..DocumentError::message("either session_id or meta2 is required")
            };
            return error_response(StatusCode::BAD_REQUEST, &err);
        }
    };

    let features = match api::parse_step_two(&obj["features"]) {
        Ok(f) => f,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e),
    };
    match api::step_two(&snap.model, &meta2, &features) {
        Ok(resp) => {
            tracing::info!(label = resp.final_label, confident = resp.step1_confident, "step 2");
            json_response(StatusCode::OK, &resp)
        }
        Err(e) => error_response(StatusCode::UNPROCESSABLE_ENTITY, &DocumentError::message(e.to_string())),
    }
}

//! HTTP service that runs interactive concept-learning sessions.
//!
//! See `docs/api.md` for the request and response schemas.

pub mod error;
pub mod state;
mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use conceptlearn::data::Split;
use conceptlearn::session::record::{JournalEntry, MetricsRow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::{AppState, CreateSession, DatasetEntry, DatasetRequest, Handle, Live};

pub use crate::state::Status;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(create_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/decision", post(post_decision))
        .route("/sessions/{id}/model", get(get_model))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/journal", get(get_journal))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

#[derive(Serialize)]
struct TruthSummary {
    name: String,
    features: Vec<String>,
    seeds: Vec<String>,
}

#[derive(Serialize)]
struct DatasetInfo {
    id: String,
    n_rows: usize,
    n_features: usize,
    /// Negative and positive row counts.
    class_counts: [usize; 2],
    /// Train, validation and test row counts.
    split_sizes: [usize; 3],
    feature_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<Vec<TruthSummary>>,
}

fn dataset_info(id: String, e: &DatasetEntry) -> DatasetInfo {
    let d = &e.data;
    let names = |v: &[usize]| v.iter().map(|&i| d.feature_names[i].clone()).collect();
    let count = |s: Split| d.split.iter().filter(|&&x| x == s).count();
    DatasetInfo {
        id,
        n_rows: d.n_rows(),
        n_features: d.n_features(),
        class_counts: d.class_counts(),
        split_sizes: [count(Split::Train), count(Split::Valid), count(Split::Test)],
        feature_names: d.feature_names.clone(),
        truth: e.truth.as_ref().map(|t| {
            t.concepts
                .iter()
                .map(|c| TruthSummary {
                    name: c.name.clone(),
                    features: names(&c.features),
                    seeds: names(&c.seeds),
                })
                .collect()
        }),
    }
}

async fn create_dataset(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: DatasetRequest = parse(&body)?;
    let (id, entry) = blocking(move || st.register_dataset(req)).await?;
    log::info!("registered dataset {id}");
    Ok((StatusCode::CREATED, Json(dataset_info(id, &entry))).into_response())
}

async fn get_dataset(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<DatasetInfo>, ApiError> {
    let entry = st.dataset(&id)?;
    Ok(Json(dataset_info(id, &entry)))
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse(&body)?;
    let (id, slot) = blocking(move || st.create_session(req)).await?;
    let mut guard = Arc::clone(&slot)
        .try_lock_owned()
        .map_err(|_| ApiError::internal("new session is already locked"))?;
    let handle = Live::computing_handle(&guard.id, &guard.dataset_id);
    log::info!("created session {id}");
    tokio::task::spawn_blocking(move || guard.advance());
    Ok((StatusCode::CREATED, Json(handle)).into_response())
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Handle>, ApiError> {
    let (dataset_id, slot) = st.session(&id)?;
    // a held lock means a proposal is being computed
    let handle = match slot.try_lock() {
        Ok(mut live) => live.handle(),
        Err(_) => Live::computing_handle(&id, &dataset_id),
    };
    Ok(Json(handle))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    accept: bool,
    #[serde(default)]
    idempotency_key: Option<String>,
    /// Step of the proposal being answered; rejected when stale.
    #[serde(default)]
    step: Option<usize>,
}

async fn post_decision(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Handle>, ApiError> {
    let req: DecisionBody = parse(&body)?;
    let header_key = match headers.get("idempotency-key") {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("invalid_header", "Idempotency-Key must be ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let key = match (header_key, req.idempotency_key) {
        (Some(h), Some(b)) if h != b => {
            return Err(ApiError::bad_request(
                "key_mismatch",
                "Idempotency-Key header and body idempotency_key differ",
            ))
        }
        (h, b) => h.or(b),
    };
    let (_, slot) = st.session(&id)?;
    let mut live = slot.lock_owned().await;
    let handle = blocking(move || live.decide(req.accept, key, req.step)).await?;
    Ok(Json(handle))
}

#[derive(Serialize)]
struct ConceptModel {
    name: String,
    features: Vec<String>,
    weight: f64,
}

#[derive(Serialize)]
struct Model {
    concepts: Vec<ConceptModel>,
    bias: f64,
    l1_weight: f64,
    metrics: MetricsRow,
}

async fn get_model(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Model>, ApiError> {
    let (_, slot) = st.session(&id)?;
    let live = slot.lock().await;
    let s = &live.session;
    let a = s.concepts();
    let p = s.predictor();
    let names = &s.data().feature_names;
    let concepts = a
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| ConceptModel {
            name: name.clone(),
            features: a.features(j).iter().map(|&i| names[i].clone()).collect(),
            weight: p.weights[j],
        })
        .collect();
    Ok(Json(Model {
        concepts,
        bias: p.bias,
        l1_weight: p.l1_weight,
        metrics: s.latest_metrics().clone(),
    }))
}

async fn get_metrics(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<MetricsRow>>, ApiError> {
    let (_, slot) = st.session(&id)?;
    let live = slot.lock().await;
    Ok(Json(live.session.metrics().to_vec()))
}

async fn get_journal(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<JournalEntry>>, ApiError> {
    let (_, slot) = st.session(&id)?;
    let live = slot.lock().await;
    Ok(Json(live.session.journal().to_vec()))
}

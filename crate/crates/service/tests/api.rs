use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use conceptlearn::data::{generate_toy, ToySpec};
use conceptlearn::experiment::{run_variant, Problem};
use conceptlearn::{SessionConfig, SimilarityGraph};
use conceptlearn_service::router;
use conceptlearn_service::state::AppState;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const PPC: usize = 3;

fn spec() -> ToySpec {
    ToySpec {
        n_instances: 1200,
        seed: 5,
        ..ToySpec::default()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("Idempotency-Key", k);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

/// Polls until the session leaves the computing state.
async fn settle(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (status, h) = call(app, "GET", &format!("/sessions/{id}"), None, None).await;
        assert_eq!(status, StatusCode::OK);
        if h["status"] != "computing" {
            return h;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("session {id} never settled");
}

async fn toy_dataset(app: &Router) -> Value {
    let (status, ds) = call(app, "POST", "/datasets", Some(json!({"kind": "toy", "spec": spec()})), None).await;
    assert_eq!(status, StatusCode::CREATED, "{ds}");
    ds
}

fn first_seeds(ds: &Value) -> Vec<String> {
    ds["truth"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["seeds"][0].as_str().unwrap().to_string())
        .collect()
}

async fn new_session(app: &Router, ds: &Value) -> String {
    let body = json!({
        "dataset_id": ds["id"],
        "seeds": first_seeds(ds),
        "config": {"proposals_per_concept": PPC},
    });
    let (status, h) = call(app, "POST", "/sessions", Some(body), None).await;
    assert_eq!(status, StatusCode::CREATED, "{h}");
    assert_eq!(h["status"], "computing");
    h["id"].as_str().unwrap().to_string()
}

fn app_in(dir: &Path) -> Router {
    router(AppState::open(dir).unwrap())
}

/// Answers every proposal from the dataset's truth concepts.
async fn drive_with_truth(app: &Router, id: &str, ds: &Value) -> Value {
    let truth = ds["truth"].as_array().unwrap().clone();
    loop {
        let h = settle(app, id).await;
        if h["status"] == "finished" {
            return h;
        }
        let p = &h["pending"];
        let concept = p["concept"].as_u64().unwrap() as usize;
        let feature = p["feature_name"].as_str().unwrap();
        let accept = truth[concept]["features"].as_array().unwrap().iter().any(|f| f == feature);
        let body = json!({"accept": accept, "step": p["step"]});
        let (status, _) = call(app, "POST", &format!("/sessions/{id}/decision"), Some(body), None).await;
        assert_eq!(status, StatusCode::OK);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_lifecycle_and_status() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    let ds = toy_dataset(&app).await;
    assert_eq!(ds["n_rows"], 1200);
    let (status, got) = call(&app, "GET", &format!("/datasets/{}", ds["id"].as_str().unwrap()), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["n_features"], ds["n_features"]);

    let id = new_session(&app, &ds).await;
    let h = settle(&app, &id).await;
    assert_eq!(h["status"], "awaiting_feedback");
    assert_eq!(h["steps"], 0);
    let p = &h["pending"];
    assert_eq!(p["step"], 1);
    assert!(!p["examples"].as_array().unwrap().is_empty());
    assert!(p["score_pred"].is_number() && p["score_intuit"].is_number());

    let h = drive_with_truth(&app, &id, &ds).await;
    assert!(h.get("pending").is_none());
    let (_, journal) = call(&app, "GET", &format!("/sessions/{id}/journal"), None, None).await;
    let n_concepts = ds["truth"].as_array().unwrap().len();
    assert_eq!(journal.as_array().unwrap().len(), n_concepts * PPC);
    assert_eq!(h["steps"], n_concepts * PPC);

    // nothing is pending once the session is finished
    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/decision"), Some(json!({"accept": true})), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "not_awaiting");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concept_done_marks_the_first_proposal_of_a_new_concept() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    let ds = toy_dataset(&app).await;
    let id = new_session(&app, &ds).await;
    let mut seen = Vec::new();
    loop {
        let h = settle(&app, &id).await;
        if h["status"] == "finished" {
            break;
        }
        seen.push((h["status"].as_str().unwrap().to_string(), h["pending"]["concept"].as_u64().unwrap()));
        let body = json!({"accept": false});
        call(&app, "POST", &format!("/sessions/{id}/decision"), Some(body), None).await;
    }
    for w in seen.windows(2) {
        let expected = if w[0].1 != w[1].1 { "concept_done" } else { "awaiting_feedback" };
        assert_eq!(w[1].0, expected);
    }
    assert_eq!(seen[0].0, "awaiting_feedback");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_requests_are_rejected_with_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    let ds = toy_dataset(&app).await;
    let seeds = first_seeds(&ds);

    let dup = json!({"dataset_id": ds["id"], "seeds": [seeds[0], seeds[0]]});
    let (status, err) = call(&app, "POST", "/sessions", Some(dup), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "duplicate_seed");
    assert_eq!(err["field"], "seeds[1]");

    let unknown = json!({"dataset_id": ds["id"], "seeds": [seeds[0], "no-such-word"]});
    let (status, err) = call(&app, "POST", "/sessions", Some(unknown), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "unknown_feature");
    assert_eq!(err["field"], "seeds[1]");

    let bad_cfg = json!({"dataset_id": ds["id"], "seeds": seeds, "config": {"proposals_per_concept": 0}});
    let (status, err) = call(&app, "POST", "/sessions", Some(bad_cfg), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "config");

    let (status, err) = call(&app, "POST", "/sessions", Some(json!({"dataset_id": "ds-99", "seeds": seeds})), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");

    let (status, err) = call(&app, "POST", "/datasets", Some(json!({"kind": "bogus"})), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid_json");

    for uri in ["/sessions/s-42", "/sessions/s-42/model", "/sessions/s-42/journal", "/datasets/ds-42"] {
        let (status, _) = call(&app, "GET", uri, None, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }

    let id = new_session(&app, &ds).await;
    let h = settle(&app, &id).await;
    let stale = json!({"accept": true, "step": h["pending"]["step"].as_u64().unwrap() + 1});
    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/decision"), Some(stale), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "stale_step");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn repeated_idempotency_key_applies_once() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    let ds = toy_dataset(&app).await;
    let id = new_session(&app, &ds).await;
    settle(&app, &id).await;
    let uri = format!("/sessions/{id}/decision");
    let (s1, h1) = call(&app, "POST", &uri, Some(json!({"accept": false})), Some("k1")).await;
    let (s2, h2) = call(&app, "POST", &uri, Some(json!({"accept": false})), Some("k1")).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(h1["n_decisions"], 1);
    assert_eq!(h2["n_decisions"], 1);
    assert_eq!(h2["replayed"], true);
    assert!(h1.get("replayed").is_none());

    let (status, _) = call(&app, "POST", &uri, Some(json!({"accept": false, "idempotency_key": "k2"})), Some("k3")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn accept_grows_the_concept_and_reject_does_not() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    let ds = toy_dataset(&app).await;
    let id = new_session(&app, &ds).await;
    let h = settle(&app, &id).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/model"), None, None).await;
    let feature = h["pending"]["feature_name"].as_str().unwrap().to_string();

    call(&app, "POST", &format!("/sessions/{id}/decision"), Some(json!({"accept": false})), None).await;
    let (_, after_reject) = call(&app, "GET", &format!("/sessions/{id}/model"), None, None).await;
    assert_eq!(after_reject["concepts"], before["concepts"]);

    let h = settle(&app, &id).await;
    let j2 = h["pending"]["concept"].as_u64().unwrap() as usize;
    let f2 = h["pending"]["feature_name"].as_str().unwrap().to_string();
    assert_ne!(f2, feature);
    call(&app, "POST", &format!("/sessions/{id}/decision"), Some(json!({"accept": true})), None).await;
    let (_, after_accept) = call(&app, "GET", &format!("/sessions/{id}/model"), None, None).await;
    let grown: Vec<&Value> = after_accept["concepts"][j2]["features"].as_array().unwrap().iter().collect();
    assert!(grown.iter().any(|f| *f == &f2));
    assert_eq!(grown.len(), before["concepts"][j2]["features"].as_array().unwrap().len() + 1);

    // the model weights are the latest journal weights
    let (_, journal) = call(&app, "GET", &format!("/sessions/{id}/journal"), None, None).await;
    let last = journal.as_array().unwrap().last().unwrap().clone();
    let weights: Vec<Value> = after_accept["concepts"].as_array().unwrap().iter().map(|c| c["weight"].clone()).collect();
    assert_eq!(Value::Array(weights), last["weights"]);
    assert_eq!(after_accept["bias"], last["bias"]);
    let (_, metrics) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None, None).await;
    assert_eq!(metrics.as_array().unwrap().last().unwrap(), &after_accept["metrics"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn truth_driven_session_matches_the_batch_runner() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    let ds = toy_dataset(&app).await;
    let id = new_session(&app, &ds).await;
    drive_with_truth(&app, &id, &ds).await;
    let (_, journal) = call(&app, "GET", &format!("/sessions/{id}/journal"), None, None).await;
    let (_, model) = call(&app, "GET", &format!("/sessions/{id}/model"), None, None).await;

    let (data, truth) = generate_toy(&spec()).unwrap();
    let graph = Arc::new(SimilarityGraph::build(&data.x, false));
    let seeds: Vec<usize> = first_seeds(&ds).iter().map(|n| data.feature_index(n).unwrap()).collect();
    let problem = Problem {
        data: Arc::new(data),
        truth,
        graph,
    };
    let cfg = SessionConfig {
        proposals_per_concept: PPC,
        ..SessionConfig::default()
    };
    let (batch, violations) = run_variant(&problem, &seeds, cfg).unwrap();
    assert_eq!(violations, 0);
    assert_eq!(journal, serde_json::to_value(batch.journal()).unwrap());
    let expected: Value = serde_json::from_str(&batch.concepts_json().unwrap()).unwrap();
    for c in model["concepts"].as_array().unwrap() {
        assert_eq!(c["features"], expected[c["name"].as_str().unwrap()], "{}", c["name"]);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_survive_a_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let (id, ds_id, journal, pending) = {
        let app = app_in(tmp.path());
        let ds = toy_dataset(&app).await;
        let id = new_session(&app, &ds).await;
        for (k, accept) in [true, false, true].into_iter().enumerate() {
            settle(&app, &id).await;
            let key = format!("key-{k}");
            call(&app, "POST", &format!("/sessions/{id}/decision"), Some(json!({"accept": accept})), Some(&key)).await;
        }
        let h = settle(&app, &id).await;
        let (_, journal) = call(&app, "GET", &format!("/sessions/{id}/journal"), None, None).await;
        (id, ds["id"].as_str().unwrap().to_string(), journal, h["pending"].clone())
    };

    let app = app_in(tmp.path());
    let h = settle(&app, &id).await;
    assert_eq!(h["n_decisions"], 3);
    assert_eq!(h["pending"]["step"], pending["step"]);
    assert_eq!(h["pending"]["feature"], pending["feature"]);
    let (_, replayed) = call(&app, "GET", &format!("/sessions/{id}/journal"), None, None).await;
    assert_eq!(replayed, journal);

    // new ids continue after the restored ones
    let (_, ds2) = call(&app, "POST", "/datasets", Some(json!({"kind": "toy", "spec": spec()})), None).await;
    assert_ne!(ds2["id"].as_str().unwrap(), ds_id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn torn_log_tail_is_dropped_on_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let id = {
        let app = app_in(tmp.path());
        let ds = toy_dataset(&app).await;
        let id = new_session(&app, &ds).await;
        for _ in 0..2 {
            settle(&app, &id).await;
            call(&app, "POST", &format!("/sessions/{id}/decision"), Some(json!({"accept": false})), None).await;
        }
        settle(&app, &id).await;
        id
    };
    let log = tmp.path().join("sessions").join(&id).join("decisions.jsonl");
    let intact = fs::read(&log).unwrap();
    let mut torn = intact.clone();
    torn.extend_from_slice(b"{\"step\":2,\"conc");
    fs::write(&log, torn).unwrap();

    let app = app_in(tmp.path());
    let h = settle(&app, &id).await;
    assert_eq!(h["n_decisions"], 2);
    assert_eq!(fs::read(&log).unwrap(), intact);

    // the session keeps working after recovery
    let (status, h) = call(&app, "POST", &format!("/sessions/{id}/decision"), Some(json!({"accept": false})), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h["n_decisions"], 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn inline_datasets_are_parsed_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_in(tmp.path());
    // word 0 marks positives, word 1 marks negatives, word 2 is everywhere
    let mut counts = String::from("row,col,count\n");
    let mut labels = String::from("row,label\n");
    for r in 0..40 {
        let y = r % 2;
        counts.push_str(&format!("{r},{},{}\n", 1 - y, 1 + r % 3));
        counts.push_str(&format!("{r},2,1\n"));
        labels.push_str(&format!("{r},{y}\n"));
    }
    let body = json!({
        "kind": "inline",
        "counts_csv": counts,
        "labels_csv": labels,
        "features": ["tasty", "rude", "food"],
        "truth": {"taste": {"features": ["tasty", "food"], "seeds": ["tasty"]}},
    });
    let (status, ds) = call(&app, "POST", "/datasets", Some(body.clone()), None).await;
    assert_eq!(status, StatusCode::CREATED, "{ds}");
    assert_eq!(ds["n_rows"], 40);
    assert_eq!(ds["class_counts"], json!([20, 20]));
    assert_eq!(ds["truth"][0]["seeds"], json!(["tasty"]));

    let session = json!({"dataset_id": ds["id"], "seeds": ["tasty"], "config": {"proposals_per_concept": 1}});
    let (status, h) = call(&app, "POST", "/sessions", Some(session), None).await;
    assert_eq!(status, StatusCode::CREATED, "{h}");
    let h = settle(&app, h["id"].as_str().unwrap()).await;
    assert_ne!(h["status"], "failed", "{h}");

    let mut bad = body.clone();
    bad["truth"] = json!({"taste": {"features": ["spicy"]}});
    let (status, err) = call(&app, "POST", "/datasets", Some(bad), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "truth");

    let mut bad = body;
    bad["labels_csv"] = json!("label\n1\n");
    let (status, err) = call(&app, "POST", "/datasets", Some(bad), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid_dataset");
    // rejected uploads leave nothing behind
    let dirs = fs::read_dir(tmp.path().join("datasets")).unwrap().count();
    assert_eq!(dirs, 1);
}

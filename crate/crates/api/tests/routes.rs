use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use refground::models::{train_models, TrainingConfig};
use refground::scene::{generate_corpus, SceneConfig, SceneFile};
use refground::seqmodel::TrainConfig;
use refground::spatial::SpatialTrainConfig;
use refground::{AttributeFeaturizer, EngineConfig, GroundingEngine, ModelSet};
use refground_api::{router, ApiConfig, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture() -> &'static (ModelSet, Vec<SceneFile>) {
    static CELL: OnceLock<(ModelSet, Vec<SceneFile>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let (files, splits) = generate_corpus(&SceneConfig::default(), 50, 3).unwrap();
        let quick = TrainConfig {
            learning_rate: 3e-3,
            epochs: 3,
            ..TrainConfig::default()
        };
        let config = TrainingConfig {
            semantic: quick.clone(),
            spatial: SpatialTrainConfig {
                train: TrainConfig { epochs: 2, ..quick },
                ..SpatialTrainConfig::default()
            },
        };
        let train = splits.select(&files, "train");
        let models = train_models(&train, &AttributeFeaturizer::default(), &config).unwrap().0;
        (models, files)
    })
}

fn state_with(config: ApiConfig, scenes: usize) -> Arc<AppState> {
    let (models, files) = fixture();
    let engine = GroundingEngine::from_models(models.clone(), EngineConfig::default()).unwrap();
    Arc::new(AppState::new(engine, files[..scenes].to_vec(), config))
}

fn state() -> Arc<AppState> {
    state_with(ApiConfig::default(), 6)
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn assert_error(body: &Value, code: &str) {
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn health_and_scene_listing() {
    let s = state();
    let (status, body) = call(&s, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    let (_, list) = call(&s, "GET", "/api/scenes", None).await;
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 6);
    let ids: Vec<&str> = list.iter().map(|s| s["id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert!(list.iter().all(|s| s["objects"].as_u64().unwrap() >= 5 && s["width"] == 640));

    let empty = state_with(ApiConfig::default(), 0);
    assert_eq!(call(&empty, "GET", "/api/scenes", None).await.1, json!([]));

    let (status, detail) = call(&s, "GET", &format!("/api/scenes/{}", ids[0]), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(detail["proposals"].as_array().unwrap().len(), detail["objects"].as_array().unwrap().len());
    let (status, body) = call(&s, "GET", "/api/scenes/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
}

#[tokio::test]
async fn ground_then_walk_the_ranking() {
    let s = state();
    let (_, files) = fixture();
    for file in &files[..4] {
        for e in file.expressions.iter().take(3) {
            let (status, g) = call(&s, "POST", "/api/ground", Some(json!({"scene_id": file.id, "query": e.text}))).await;
            assert_eq!(status, StatusCode::OK, "{g}");
            assert_eq!(g["rank"], 1);
            assert!(g["diagnostics"]["pair_matrix"].is_object());
            assert!(!g["diagnostics"]["regions"].as_array().unwrap().is_empty());

            let engine = GroundingEngine::from_models(fixture().0.clone(), EngineConfig::default()).unwrap();
            let scene = file.scene();
            let boxes: Vec<_> = scene.objects.iter().map(|o| o.bbox).collect();
            let expected = engine.ground(&scene, &boxes, &e.text).unwrap().ranked;
            assert_eq!(g["total"], expected.len());
            let mut delivered = vec![serde_json::from_value::<refground::BoundingBox>(g["candidate"]["box"].clone()).unwrap()];
            let sid = g["session_id"].as_str().unwrap().to_string();
            loop {
                let (status, f) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": sid, "verdict": "reject"}))).await;
                assert_eq!(status, StatusCode::OK);
                if f["status"] == "exhausted" {
                    break;
                }
                assert_eq!(f["status"], "candidate");
                assert_eq!(f["rank"], delivered.len() + 1);
                delivered.push(serde_json::from_value(f["candidate"]["box"].clone()).unwrap());
            }
            let expected_boxes: Vec<_> = expected.iter().map(|c| c.bbox).collect();
            assert_eq!(delivered, expected_boxes);
            let (status, again) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": sid, "verdict": "reject"}))).await;
            assert_eq!((status, again["status"].as_str()), (StatusCode::OK, Some("exhausted")));
            let (status, body) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": sid, "verdict": "accept"}))).await;
            assert_eq!(status, StatusCode::CONFLICT);
            assert_error(&body, "exhausted");
        }
    }
}

#[tokio::test]
async fn accept_confirms_and_closes() {
    let s = state();
    let (_, files) = fixture();
    let q = json!({"scene_id": files[0].id, "query": files[0].expressions[0].text, "aggregation": "max"});
    let (_, g) = call(&s, "POST", "/api/ground", Some(q)).await;
    assert_eq!(g["aggregation"], "max");
    let sid = g["session_id"].as_str().unwrap();
    let (status, f) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": sid, "verdict": "accept"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(f["status"], "confirmed");
    assert_eq!(f["candidate"], g["candidate"]);
    assert_eq!(f["rank"], 1);
    let (status, body) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": sid, "verdict": "accept"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "session_not_found");
}

#[tokio::test]
async fn interleaved_sessions_do_not_interfere() {
    let s = state();
    let (_, files) = fixture();
    let ground = |i: usize| json!({"scene_id": files[i].id, "query": files[i].expressions[0].text});
    let (_, a) = call(&s, "POST", "/api/ground", Some(ground(0))).await;
    let (_, b) = call(&s, "POST", "/api/ground", Some(ground(1))).await;
    let (_, a_solo) = call(&s, "POST", "/api/ground", Some(ground(0))).await;
    let walk = |id: &Value| json!({"session_id": id, "verdict": "reject"});
    let mut seq_a = Vec::new();
    let mut seq_solo = Vec::new();
    for _ in 0..12 {
        seq_a.push(call(&s, "POST", "/api/feedback", Some(walk(&a["session_id"]))).await.1);
        call(&s, "POST", "/api/feedback", Some(walk(&b["session_id"]))).await;
    }
    for _ in 0..12 {
        seq_solo.push(call(&s, "POST", "/api/feedback", Some(walk(&a_solo["session_id"]))).await.1);
    }
    assert_eq!(seq_a, seq_solo);
    assert_eq!(s.sessions().len(), 3);
}

#[tokio::test]
async fn bad_requests_get_error_bodies() {
    let s = state();
    let (_, files) = fixture();
    let (status, body) = call(&s, "POST", "/api/ground", Some(json!({"scene_id": files[0].id, "query": "   "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "bad_request");
    let (status, body) = call(&s, "POST", "/api/ground", Some(json!({"scene_id": "missing", "query": "the cup"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
    let (status, body) = call(&s, "POST", "/api/ground", Some(json!({"scene": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "bad_request");
    let (status, body) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": "x", "verdict": "maybe"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "bad_request");
    let (status, body) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": "x", "verdict": "reject"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "session_not_found");
    let (status, body) = call(&s, "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
}

#[tokio::test]
async fn idle_sessions_expire() {
    let s = state_with(
        ApiConfig {
            session_timeout: Duration::from_millis(20),
            ..ApiConfig::default()
        },
        2,
    );
    let (_, files) = fixture();
    let (_, g) = call(&s, "POST", "/api/ground", Some(json!({"scene_id": files[0].id, "query": files[0].expressions[0].text}))).await;
    tokio::time::sleep(Duration::from_millis(60)).await;
    let (status, body) = call(&s, "POST", "/api/feedback", Some(json!({"session_id": g["session_id"], "verdict": "reject"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "session_expired");
    assert!(s.sessions().is_empty());
}

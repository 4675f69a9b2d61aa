use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cog_core::scorer::{make_synthetic_scorer, SyntheticWorldConfig};
use cog_core::world::generate_world;
use cog_core::GroundingConfig;
use cog_service::{router, AppState, VerificationQueue};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(token: Option<&str>) -> (Router, Arc<AppState>) {
    let config = SyntheticWorldConfig::default();
    let corpus = Arc::new(generate_world(80, &config).unwrap());
    let scorer = Arc::new(make_synthetic_scorer(&corpus, config).unwrap());
    let state = Arc::new(
        AppState::new(
            corpus,
            scorer,
            GroundingConfig::default(),
            VerificationQueue::in_memory(),
            token.map(String::from),
        )
        .unwrap(),
    );
    (router(state.clone(), None), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut builder = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            builder = builder.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(builder.body(body).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn health_is_ok() {
    let (app, _) = app(None);
    let (status, body) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn ground_enqueues_rejections_and_decisions_flow() {
    let (app, _) = app(None);
    let images: Vec<String> = (0..10).map(|i| format!("img{i:05}")).collect();
    let (status, body) = call(&app, "POST", "/v1/ground", Some(json!({"entity_id": "e00000", "image_ids": images}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let verdicts = body["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 10);
    let rejected = verdicts.iter().filter(|v| v["stage1_accept"] == false).count();
    assert_eq!(body["enqueued"], rejected);

    let (_, page) = call(&app, "GET", "/v1/queue?status=pending&limit=3", None).await;
    assert_eq!(page["total"], rejected);
    assert_eq!(page["items"].as_array().unwrap().len(), rejected.min(3));

    let item_id = page["items"][0]["item_id"].as_str().unwrap().to_string();
    let (status, item) = call(&app, "GET", &format!("/v1/queue/{item_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "pending");

    let uri = format!("/v1/queue/{item_id}/decision");
    let (status, item) = call(&app, "POST", &uri, Some(json!({"annotator": "a1", "decision": "reject"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "rejected");
    let (status, _) = call(&app, "POST", &uri, Some(json!({"annotator": "a2", "decision": "accept"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = call(&app, "GET", "/v1/queue/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, report) = call(&app, "GET", "/v1/report?with_human=false", None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert!(report["classification"]["accuracy"].as_f64().is_some());
}

#[tokio::test]
async fn rank_orders_candidates() {
    let (app, _) = app(None);
    let ids: Vec<String> = (0..50).map(|i| format!("img{i:05}")).collect();
    let (status, body) = call(&app, "POST", "/v1/rank", Some(json!({"entity_id": "e00007", "candidate_ids": ids}))).await;
    assert_eq!(status, StatusCode::OK);
    let ranked = body.as_array().unwrap();
    assert_eq!(ranked.len(), 50);
    let preds: Vec<f64> = ranked.iter().map(|r| r["prediction"].as_f64().unwrap()).collect();
    assert!(preds.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(ranked[0]["id"], "img00007");
}

#[tokio::test]
async fn unknown_ids_and_bad_input() {
    let (app, _) = app(None);
    let (status, _) = call(&app, "POST", "/v1/ground", Some(json!({"entity_id": "zzz", "image_ids": ["img00000"]}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/v1/ground", Some(json!({"entity_id": "e00000", "image_ids": []}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/v1/queue?status=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/v1/report", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn token_guards_api_but_not_health() {
    let (app, _) = app(Some("s3cret"));
    let (status, _) = call(&app, "GET", "/v1/queue", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let request = Request::builder()
        .uri("/v1/queue")
        .header("authorization", "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.clone().oneshot(request).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn concurrent_decisions_yield_one_winner() {
    let (app, _) = app(None);
    let images: Vec<String> = (1..20).map(|i| format!("img{i:05}")).collect();
    call(&app, "POST", "/v1/ground", Some(json!({"entity_id": "e00000", "image_ids": images}))).await;
    let uri = "/v1/queue/item-000001/decision".to_string();
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let app = app.clone();
            let uri = uri.clone();
            tokio::spawn(async move { call(&app, "POST", &uri, Some(json!({"annotator": format!("a{i}"), "decision": "accept"}))).await.0 })
        })
        .collect();
    let mut statuses = Vec::new();
    for t in tasks {
        statuses.push(t.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1);
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
}

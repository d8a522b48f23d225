#![cfg(feature = "service")]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cseg::service::{router, serve_listener, AppState, ServiceConfig};

fn fixture(path: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)).unwrap()
}

fn app(config: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = AppState::new(config);
    (state.clone(), router(state))
}

const BOUNDARY: &str = "cseg-test-boundary";

fn multipart(parts: &[(&str, Vec<u8>)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n\r\n").bytes());
        body.extend(data);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").bytes());
    body
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Bytes) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes())
}

async fn create(app: &Router, parts: &[(&str, Vec<u8>)]) -> (StatusCode, Value) {
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn create_ok(app: &Router, parts: &[(&str, Vec<u8>)]) -> String {
    let (status, body) = create(app, parts).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

fn interactive_parts() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("image", fixture("interactive/image.png")),
        ("superpixels", fixture("interactive/superpixels.png")),
    ]
}

async fn post_scribbles(app: &Router, id: &str, body: impl Into<Body>) -> (StatusCode, Value) {
    let req = Request::post(format!("/sessions/{id}/scribbles"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Bytes) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn scribbles() -> Vec<u8> {
    fixture("interactive/scribbles.json")
}

#[tokio::test(flavor = "multi_thread")]
async fn creation_returns_distinct_ids() {
    let (state, app) = app(ServiceConfig::default());
    let a = create_ok(&app, &[("image", fixture("interactive/image.png"))]).await;
    let b = create_ok(&app, &interactive_parts()).await;
    assert_ne!(a, b);
    assert_eq!(state.session_count(), 2);
    let (status, body) = get(&app, &format!("/sessions/{a}")).await;
    assert_eq!(status, StatusCode::OK);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["rounds"], 0);
    assert_eq!(body["state"], "idle");
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_inputs_are_rejected() {
    let (_, app) = app(ServiceConfig::default());
    let mut parts = interactive_parts();
    parts.push(("probmap", fixture("island/probmap.cseg")));
    let (status, body) = create(&app, &parts).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (status, _) = create(&app, &[("image", b"not a png".to_vec())]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = create(&app, &[("superpixels", fixture("interactive/superpixels.png"))]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let parts = vec![
        ("image", fixture("interactive/image.png")),
        ("config", br#"{"algo": "ilp-q"}"#.to_vec()),
    ];
    let (status, _) = create(&app, &parts).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn rounds_are_served_and_immutable() {
    let (_, app) = app(ServiceConfig::default());
    let id = create_ok(&app, &interactive_parts()).await;

    let (status, body) = post_scribbles(&app, &id, scribbles()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["round"], 0);
    assert_eq!(body["report"]["status"], "converged");
    let class_url = body["class_png"].as_str().unwrap().to_string();
    assert_eq!(class_url, format!("/sessions/{id}/rounds/0/class.png"));

    let (status, png) = get(&app, &class_url).await;
    assert_eq!(status, StatusCode::OK);
    assert!(png.starts_with(b"\x89PNG"));
    for file in ["instance.png", "panoptic.png", "overlay.png", "superpixels.png", "scribbles.json", "report.json"] {
        let (status, _) = get(&app, &format!("/sessions/{id}/rounds/0/{file}")).await;
        assert_eq!(status, StatusCode::OK, "{file}");
    }
    let (status, _) = get(&app, &format!("/sessions/{id}/rounds/0/secrets.txt")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, first) = get(&app, &format!("/sessions/{id}/segmentation?round=0")).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = get(&app, &format!("/sessions/{id}/segmentation?round=5")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = post_scribbles(&app, &id, r#"{"scribbles": []}"#).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["round"], 1);
    let (_, latest) = get(&app, &format!("/sessions/{id}/segmentation")).await;
    let latest: Value = serde_json::from_slice(&latest).unwrap();
    assert_eq!(latest["round"], 1);

    let (_, again) = get(&app, &format!("/sessions/{id}/segmentation?round=0")).await;
    assert_eq!(first, again);
    let (_, png_again) = get(&app, &class_url).await;
    assert_eq!(png, png_again);
    let (_, r1) = get(&app, &format!("/sessions/{id}/rounds/0/report.json")).await;
    let (_, r2) = get(&app, &format!("/sessions/{id}/rounds/0/report.json")).await;
    assert_eq!(r1, r2);
}

#[tokio::test(flavor = "multi_thread")]
async fn policy_violations_are_listed() {
    let (_, app) = app(ServiceConfig::default());
    let id = create_ok(&app, &interactive_parts()).await;
    let mut set: Value = serde_json::from_slice(&scribbles()).unwrap();
    set["scribbles"][1]["region_id"] = json!(1);
    let (status, body) = post_scribbles(&app, &id, set.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["violations"]["duplicate_region_ids"], json!([1]));

    let (status, _) = post_scribbles(&app, &id, "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, status_body) = get(&app, &format!("/sessions/{id}")).await;
    let status_body: Value = serde_json::from_slice(&status_body).unwrap();
    assert_eq!(status_body["rounds"], 0);
    assert_eq!(status_body["state"], "idle");
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_sessions_are_not_found() {
    let (_, app) = app(ServiceConfig::default());
    let (status, _) = post_scribbles(&app, "missing", scribbles()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/sessions/missing/segmentation").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = create_ok(&app, &interactive_parts()).await;
    let (status, _) = get(&app, &format!("/sessions/{id}/segmentation")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let del = |id: &str| Request::delete(format!("/sessions/{id}")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, del(&id)).await.0, StatusCode::NO_CONTENT);
    assert_eq!(send(&app, del(&id)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn oversized_bodies_are_refused() {
    let (_, app) = app(ServiceConfig {
        max_body: 8 * 1024,
        ..ServiceConfig::default()
    });
    let id = create_ok(&app, &[("image", fixture("interactive/image.png"))]).await;
    let mut big = scribbles();
    big.extend(std::iter::repeat_n(b' ', 16 * 1024));
    let (status, _) = post_scribbles(&app, &id, big).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);

    let parts = vec![
        ("image", fixture("interactive/image.png")),
        ("padding", vec![0u8; 16 * 1024]),
    ];
    let (status, _) = create(&app, &parts).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

async fn wait_idle(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (_, body) = get(app, &format!("/sessions/{id}")).await;
        let body: Value = serde_json::from_slice(&body).unwrap();
        if body["state"] != "running" {
            return body;
        }
        assert!(start.elapsed() < Duration::from_secs(60), "solve never finished");
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn async_rounds_are_single_writer_and_isolated() {
    let (_, app) = app(ServiceConfig {
        asynchronous: true,
        ..ServiceConfig::default()
    });
    // dense grid superpixels make the exact solve outlast its time limit
    let slow = vec![
        ("image", fixture("interactive/image.png")),
        ("config", br#"{"algo": "ilp-u", "superpixels": 576, "time_limit": 2.0}"#.to_vec()),
    ];
    let a = create_ok(&app, &slow).await;
    let b = create_ok(&app, &interactive_parts()).await;

    let (status, body) = post_scribbles(&app, &a, scribbles()).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["round"], 0);
    assert_eq!(body["state"], "running");
    assert_eq!(body["status_url"], format!("/sessions/{a}"));

    let (status, _) = post_scribbles(&app, &a, r#"{"scribbles": []}"#).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let started = Instant::now();
    let (status, _) = post_scribbles(&app, &b, scribbles()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let b_state = wait_idle(&app, &b).await;
    assert_eq!(b_state["rounds"], 1);
    let (_, a_state) = get(&app, &format!("/sessions/{a}")).await;
    let a_state: Value = serde_json::from_slice(&a_state).unwrap();
    assert_eq!(a_state["state"], "running", "session b finished after {:?}", started.elapsed());

    let a_state = wait_idle(&app, &a).await;
    assert_eq!(a_state["state"], "idle", "{a_state}");
    assert_eq!(a_state["rounds"], 1);
    let (_, seg) = get(&app, &format!("/sessions/{a}/segmentation?round=0")).await;
    let seg: Value = serde_json::from_slice(&seg).unwrap();
    assert_eq!(seg["report"]["status"], "feasible_budget_hit");
    assert_eq!(seg["report"]["algo"], "ilp-u");
}

#[tokio::test(flavor = "multi_thread")]
async fn idle_sessions_expire() {
    let (state, app) = app(ServiceConfig {
        idle_timeout: Duration::from_millis(50),
        ..ServiceConfig::default()
    });
    let id = create_ok(&app, &interactive_parts()).await;
    assert_eq!(state.expire_idle(), 0);
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(state.expire_idle(), 1);
    assert_eq!(state.session_count(), 0);
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn serves_over_tcp() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_listener(listener, ServiceConfig::default()));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /sessions/nope HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).await.unwrap();
    assert!(response.starts_with("HTTP/1.1 404"), "{response}");
    assert!(response.contains("no session nope"));
}

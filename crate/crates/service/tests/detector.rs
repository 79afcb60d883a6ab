use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use wagonline_service::detector::{DetectorClient, DetectorError, RetryPolicy};

#[derive(Clone, Copy)]
enum Mode {
    Healthy,
    Down,
    Garbage,
    Slow,
    FlakyOnce,
}

async fn infer(State((mode, hits)): State<(Mode, Arc<AtomicU32>)>, Json(req): Json<Value>) -> Response {
    let n = hits.fetch_add(1, Ordering::SeqCst);
    let frame = json!({
        "v": 1, "frame": 7, "ts_ms": 1000, "camera": "cam", "width": 1920, "height": 1080,
        "crop_ref": req["crop_ref"],
        "detections": [{"cls": "code_region", "x": 10.0, "y": 20.0, "w": 300.0, "h": 60.0, "conf": 0.9}]
    });
    match mode {
        Mode::Healthy => Json(frame).into_response(),
        Mode::FlakyOnce if n == 0 => StatusCode::BAD_GATEWAY.into_response(),
        Mode::FlakyOnce => Json(frame).into_response(),
        Mode::Down => StatusCode::SERVICE_UNAVAILABLE.into_response(),
        Mode::Garbage => {
            Json(json!({"v": 1, "frame": 7, "detections": [{"cls": "code_region", "conf": 1.5}]})).into_response()
        }
        Mode::Slow => {
            tokio::time::sleep(Duration::from_millis(500)).await;
            Json(frame).into_response()
        }
    }
}

async fn detector(mode: Mode) -> (DetectorClient, Arc<AtomicU32>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicU32::new(0));
    let app = Router::new().route("/infer", post(infer)).with_state((mode, hits.clone()));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let policy = RetryPolicy {
        attempts: 3,
        timeout: Duration::from_millis(150),
        initial_backoff: Duration::from_millis(5),
        max_backoff: Duration::from_millis(20),
    };
    (DetectorClient::new(&format!("http://{addr}"), policy).unwrap(), hits)
}

#[tokio::test]
async fn healthy_endpoint_returns_a_frame() {
    let (client, hits) = detector(Mode::Healthy).await;
    let frame = client.poll_endpoint("cam/f7.jpg").await.unwrap();
    assert_eq!(frame.frame, 7);
    assert_eq!(frame.crop_ref.as_deref(), Some("cam/f7.jpg"));
    assert_eq!(frame.detections.len(), 1);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn three_server_errors_mean_unavailable() {
    let (client, hits) = detector(Mode::Down).await;
    let err = client.poll_endpoint("x").await.unwrap_err();
    assert!(matches!(err, DetectorError::Unavailable { attempts: 3, .. }), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn one_server_error_is_retried() {
    let (client, hits) = detector(Mode::FlakyOnce).await;
    assert!(client.poll_endpoint("x").await.is_ok());
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn schema_violation_is_a_bad_response() {
    let (client, hits) = detector(Mode::Garbage).await;
    let err = client.poll_endpoint("x").await.unwrap_err();
    assert!(matches!(err, DetectorError::BadResponse(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn slow_endpoint_times_out() {
    let (client, _) = detector(Mode::Slow).await;
    assert!(matches!(client.poll_endpoint("x").await, Err(DetectorError::Timeout(_))));
}

#[tokio::test]
async fn nothing_listening_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").await.unwrap().local_addr().unwrap().port();
    let client = DetectorClient::new(
        &format!("http://127.0.0.1:{port}/"),
        RetryPolicy { initial_backoff: Duration::from_millis(1), ..RetryPolicy::default() },
    )
    .unwrap();
    assert!(matches!(client.poll_endpoint("x").await, Err(DetectorError::Unavailable { .. })));
}

//! axum transport: the `/ws` frame stream plus read-only HTTP views.
//!
//! HTTP bodies are the frames the stream would carry for the same query,
//! numbered as the first frame of a one-frame connection.

use std::future::Future;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::mpsc::unbounded_channel;
use tracing::debug;

use codetrail_core::timeline::ViewportHints;

use crate::hub::{Flow, Hub};
use crate::protocol::{ErrorCode, ErrorPayload, Frame, FrameType, SnapshotRequest, TimelineRequest};

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/healthz", get(healthz))
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .with_state(hub)
}

pub async fn serve(
    listener: TcpListener,
    hub: Arc<Hub>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(hub)).with_graceful_shutdown(shutdown).await
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> Response {
    ws.on_upgrade(move |socket| run_socket(socket, hub))
}

async fn run_socket(socket: WebSocket, hub: Arc<Hub>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = unbounded_channel::<Frame>();
    let writer = tokio::spawn(async move {
        let mut seq = 0u64;
        while let Some(mut frame) = rx.recv().await {
            seq += 1;
            frame.frame_seq = seq;
            let text = serde_json::to_string(&frame).expect("frames always serialize");
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    let mut conn = hub.connect(tx.clone());
    debug!(conn = conn.id(), "connected");
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let err = ErrorPayload::new(ErrorCode::BadFrame, "frames are JSON text messages");
                let _ = tx.send(Frame::error("", &err));
                continue;
            }
            _ => continue,
        };
        match serde_json::from_str::<Frame>(text.as_str()) {
            Ok(frame) => {
                if conn.handle(frame).await == Flow::Close {
                    break;
                }
            }
            Err(e) => {
                let err = ErrorPayload::new(ErrorCode::BadFrame, format!("unparseable frame: {e}"));
                let _ = tx.send(Frame::error("", &err));
            }
        }
    }
    debug!(conn = conn.id(), "disconnected");
    drop(conn);
    drop(tx);
    let _ = writer.await;
}

fn authorized(hub: &Hub, headers: &HeaderMap) -> bool {
    let Some(expected) = &hub.settings().instructor_token else {
        return true;
    };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == expected)
}

fn error_response(session_id: &str, err: ErrorPayload) -> Response {
    let status = match err.code {
        ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
        ErrorCode::UnknownSession | ErrorCode::UnknownFile => StatusCode::NOT_FOUND,
        _ => StatusCode::BAD_REQUEST,
    };
    let mut f = Frame::error(session_id, &err);
    f.frame_seq = 1;
    (status, Json(f)).into_response()
}

fn frame_response(mut frame: Frame) -> Response {
    frame.frame_seq = 1;
    Json(frame).into_response()
}

macro_rules! guard {
    ($hub:expr, $headers:expr, $id:expr) => {
        if !authorized(&$hub, &$headers) {
            return error_response($id, ErrorPayload::new(ErrorCode::Unauthorized, "bad or missing bearer token"));
        }
    };
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_sessions(State(hub): State<Arc<Hub>>, headers: HeaderMap) -> Response {
    guard!(hub, headers, "");
    Json(json!({ "sessions": hub.list() })).into_response()
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TimelineQuery {
    file_path: Option<String>,
    first_line: Option<usize>,
    last_line: Option<usize>,
    excerpt_len: Option<usize>,
}

async fn timeline(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<TimelineQuery>,
    headers: HeaderMap,
) -> Response {
    guard!(hub, headers, &id);
    let mut viewport = ViewportHints::default();
    if let (Some(a), Some(b)) = (q.first_line, q.last_line) {
        viewport.visible_lines = Some((a, b));
    }
    if let Some(n) = q.excerpt_len {
        viewport.excerpt_len = n;
    }
    let req = TimelineRequest {
        file_path: q.file_path,
        viewport: Some(viewport),
        zoom: None,
        pick: None,
    };
    match hub.with_session(&id, |s| s.timeline(&req)).and_then(|r| r) {
        Ok(resp) => frame_response(Frame::new(FrameType::Timeline, &id, &resp)),
        Err(e) => error_response(&id, e),
    }
}

async fn metrics(State(hub): State<Arc<Hub>>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    guard!(hub, headers, &id);
    match hub.with_session(&id, |s| s.metrics()) {
        Ok(m) => frame_response(Frame::new(FrameType::Metrics, &id, &m)),
        Err(e) => error_response(&id, e),
    }
}

async fn snapshot(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(req): Query<SnapshotRequest>,
    headers: HeaderMap,
) -> Response {
    guard!(hub, headers, &id);
    match hub.with_session(&id, |s| s.snapshot(&req)).and_then(|r| r) {
        Ok(snap) => frame_response(Frame::new(FrameType::Snapshot, &id, &snap)),
        Err(e) => error_response(&id, e),
    }
}

//! WebSocket endpoint at `/ws`, plus optional static files for a client UI.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::mpsc;

use super::handler::ProtocolHandler;
use super::manager::SessionEvent;
use super::protocol::ServerMessage;

#[derive(Clone)]
struct AppState {
    handler: Arc<ProtocolHandler>,
    static_dir: Option<PathBuf>,
}

pub fn router(handler: Arc<ProtocolHandler>, static_dir: Option<PathBuf>) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .fallback(get(static_file))
        .with_state(AppState { handler, static_dir })
}

/// Binds `addr` and serves until the task is dropped.
pub async fn serve(addr: SocketAddr, handler: Arc<ProtocolHandler>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(handler, static_dir)).await
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.max_message_size(64 << 20).on_upgrade(move |socket| run_socket(socket, state.handler))
}

async fn run_socket(socket: WebSocket, handler: Arc<ProtocolHandler>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            if sink.send(Message::Text(m.to_json().into())).await.is_err() {
                break;
            }
        }
    });
    let mut conn = handler.connect();
    let mut forwarder: Option<(String, tokio::task::JoinHandle<()>)> = None;
    while let Some(Ok(frame)) = stream.next().await {
        let replies = match frame {
            Message::Text(t) => conn.on_text(t.as_str()).await,
            Message::Binary(b) => conn.on_binary(&b),
            Message::Close(_) => break,
            _ => continue,
        };
        for r in &replies {
            let _ = tx.send(r.clone());
        }
        conn.after_send(&replies);
        if let Some(sid) = conn.session_id() {
            if forwarder.as_ref().map(|(s, _)| s != sid).unwrap_or(true) {
                if let Ok(mut events) = handler.manager().subscribe(sid) {
                    let stamper = conn.stamper();
                    let tx = tx.clone();
                    let sid_owned = sid.to_string();
                    let task = tokio::spawn(async move {
                        while let Ok(SessionEvent::TimerTick(t)) = events.recv().await {
                            let body = super::protocol::ServerBody::TimerTick { step_index: t.step_index, remaining: t.remaining, expired: t.expired };
                            if tx.send(stamper.stamp(Some(sid_owned.clone()), body)).is_err() {
                                break;
                            }
                        }
                    });
                    if let Some((_, old)) = forwarder.replace((sid.to_string(), task)) {
                        old.abort();
                    }
                }
            }
        }
    }
    if let Some((_, f)) = forwarder {
        f.abort();
    }
    drop(tx);
    let _ = writer.await;
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        Some("glb") => "model/gltf-binary",
        Some("obj") => "text/plain",
        _ => "application/octet-stream",
    }
}

async fn static_file(State(state): State<AppState>, uri: Uri) -> Response {
    let Some(root) = state.static_dir else { return StatusCode::NOT_FOUND.into_response() };
    let rel = Path::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mut path = root.join(rel);
    if path.is_dir() {
        path = path.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

//! HTTP and WebSocket API for operator consoles.
//!
//! `GET /health` and `GET /state` answer plain JSON. `GET /ws` upgrades to
//! a socket carrying JSON envelopes; see `docs/api.md` for the schema.

use std::future::Future;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::serve::ListenerExt;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc};

use crate::orchestrator::{Command, CommandError, Engine};
use crate::shared::Envelope;

/// A command as sent by a client.
#[derive(Debug, Deserialize)]
pub struct Request {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(default)]
    pub payload: Option<Value>,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/state", get(state))
        .route("/ws", get(ws_upgrade))
        .with_state(engine)
}

/// Per-connection kernel send buffer. Kept small so a client that stops
/// reading blocks its own writer within a few plot batches; it then skips
/// batches instead of receiving a growing backlog of stale traces.
pub const SEND_BUFFER_BYTES: usize = 32 * 1024;

pub async fn serve(
    engine: Arc<Engine>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = listener.tap_io(|tcp| {
        let _ = tcp.set_nodelay(true);
        if let Err(e) = socket2::SockRef::from(&*tcp).set_send_buffer_size(SEND_BUFFER_BYTES) {
            log::debug!("cannot shrink the send buffer: {e}");
        }
    });
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn state(State(engine): State<Arc<Engine>>) -> Json<Value> {
    Json(json!({ "state": engine.state(), "stats": engine.stats() }))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(engine): State<Arc<Engine>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, engine))
}

fn reply_envelope(seq: Option<u64>, r: Result<Value, CommandError>) -> String {
    match r {
        Ok(payload) => json!({ "type": "ack", "seq": seq, "payload": payload }),
        Err(e) => json!({ "type": "error", "seq": seq, "payload": e }),
    }
    .to_string()
}

async fn run_command(engine: Arc<Engine>, text: &str) -> String {
    let req: Request = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return reply_envelope(None, Err(CommandError::new("bad_request", e.to_string()))),
    };
    let cmd = match Command::from_parts(&req.kind, req.payload) {
        Ok(c) => c,
        Err(e) => return reply_envelope(req.seq, Err(e)),
    };
    let r = tokio::task::spawn_blocking(move || engine.command(cmd))
        .await
        .unwrap_or_else(|e| Err(CommandError::new("internal", e.to_string())));
    reply_envelope(req.seq, r)
}

async fn client(socket: WebSocket, engine: Arc<Engine>) {
    let (mut sink, mut stream) = socket.split();
    let mut events = engine.shared().subscribe();
    let mut plots = engine.shared().subscribe_plot();
    let (reply_tx, mut reply_rx) = mpsc::channel::<String>(64);

    let hello = json!({ "type": "state", "seq": 0, "payload": engine.state() }).to_string();
    if sink.send(Message::Text(hello.into())).await.is_err() {
        return;
    }

    let reader_engine = engine.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(t) => {
                    // Commands from one client run in arrival order.
                    let out = run_command(reader_engine.clone(), t.as_str()).await;
                    if reply_tx.send(out).await.is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    loop {
        let out: String = tokio::select! {
            r = reply_rx.recv() => match r {
                Some(s) => s,
                None => break,
            },
            e = events.recv() => match e {
                Ok(env) => env_text(&env),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("api client missed {n} events");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            p = plots.recv() => match p {
                Ok(env) => env_text(&env),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    engine.shared().counters.plot_client_lagged.fetch_add(n, Ordering::Relaxed);
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        if sink.send(Message::Text(out.into())).await.is_err() {
            break;
        }
    }
    reader.abort();
}

fn env_text(env: &Envelope) -> String {
    env.to_string()
}

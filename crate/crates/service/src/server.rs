//! HTTP routes and the per-connection streaming session.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

use crate::model::ModelSnapshot;
use crate::protocol::{parse_request, ErrorReply, RenderRequest};

pub fn router(model: Arc<ModelSnapshot>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/info", get(info))
        .route("/stream", get(stream))
        .with_state(model)
}

async fn healthz() -> &'static str {
    "ok"
}

async fn info(State(model): State<Arc<ModelSnapshot>>) -> Response {
    ([(header::ACCESS_CONTROL_ALLOW_ORIGIN, "*")], Json(model.info())).into_response()
}

async fn stream(ws: WebSocketUpgrade, State(model): State<Arc<ModelSnapshot>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, model))
}

fn error_message(reply: &ErrorReply) -> Message {
    Message::Text(serde_json::to_string(reply).unwrap_or_default().into())
}

/// One client connection. Requests are parsed in arrival order; only the
/// newest pending one is rendered, and ids not above the last rendered
/// frame are dropped, so replies carry strictly increasing frame ids.
async fn session(socket: WebSocket, model: Arc<ModelSnapshot>) {
    let (mut sink, mut incoming) = socket.split();
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(64);
    let (req_tx, mut req_rx) = watch::channel::<Option<RenderRequest>>(None);

    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let render_tx = out_tx.clone();
    let renderer = tokio::spawn(async move {
        let mut last: Option<u64> = None;
        while req_rx.changed().await.is_ok() {
            let Some(req) = req_rx.borrow_and_update().clone() else {
                continue;
            };
            if last.is_some_and(|l| req.frame_id <= l) {
                log::debug!("dropping stale frame {}", req.frame_id);
                continue;
            }
            let id = req.frame_id;
            let m = model.clone();
            let reply = match tokio::task::spawn_blocking(move || m.render_frame(&req)).await {
                Ok(Ok(frame)) => {
                    last = Some(id);
                    let telemetry = serde_json::to_string(&frame.telemetry()).unwrap_or_default();
                    if render_tx.send(Message::Binary(frame.encode().into())).await.is_err() {
                        break;
                    }
                    Message::Text(telemetry.into())
                }
                Ok(Err(e)) => error_message(&ErrorReply {
                    frame_id: Some(id),
                    error: e.to_string(),
                }),
                Err(e) => error_message(&ErrorReply {
                    frame_id: Some(id),
                    error: format!("render task failed: {e}"),
                }),
            };
            if render_tx.send(reply).await.is_err() {
                break;
            }
        }
    });

    while let Some(msg) = incoming.next().await {
        let msg = match msg {
            Ok(m) => m,
            Err(e) => {
                log::debug!("session read error: {e}");
                break;
            }
        };
        match msg {
            Message::Text(text) => match parse_request(&text) {
                Ok(req) => {
                    req_tx.send_replace(Some(req));
                }
                Err(reply) => {
                    if out_tx.send(error_message(&reply)).await.is_err() {
                        break;
                    }
                }
            },
            Message::Binary(_) => {
                let reply = ErrorReply {
                    frame_id: None,
                    error: "requests must be JSON text messages".into(),
                };
                if out_tx.send(error_message(&reply)).await.is_err() {
                    break;
                }
            }
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    drop(req_tx);
    let _ = renderer.await;
    drop(out_tx);
    let _ = writer.await;
}

/// Serves until the process is stopped.
pub async fn serve(model: Arc<ModelSnapshot>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve_on(listener, model).await
}

pub async fn serve_on(listener: TcpListener, model: Arc<ModelSnapshot>) -> std::io::Result<()> {
    log::info!(
        "serving {} gaussians on {}",
        model.n_gaussians(),
        listener.local_addr()?
    );
    axum::serve(listener, router(model)).await
}

//! Operator HTTP API and the WebSocket stream.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use stagelink_core::engine::OperatorCmd;
use stagelink_core::protocol::MAX_FRAME;
use tokio::sync::{broadcast, mpsc};

use crate::{Handle, Request, ServerError};

pub fn router(handle: Handle) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/devices", get(devices))
        .route("/cmd", post(cmd))
        .route("/log", get(log))
        .route("/stream", get(stream))
        .with_state(handle)
}

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        (StatusCode::SERVICE_UNAVAILABLE, self.to_string()).into_response()
    }
}

async fn state(State(h): State<Handle>) -> Result<impl IntoResponse, ServerError> {
    Ok(Json(h.state().await?))
}

async fn devices(State(h): State<Handle>) -> Result<impl IntoResponse, ServerError> {
    Ok(Json(h.devices().await?))
}

/// 200 when the engine accepted the command, 409 with the reason when it
/// was refused.
async fn cmd(State(h): State<Handle>, Json(cmd): Json<OperatorCmd>) -> Result<impl IntoResponse, ServerError> {
    let outcome = h.command(cmd).await?;
    let status = if outcome.accepted { StatusCode::OK } else { StatusCode::CONFLICT };
    Ok((status, Json(outcome)))
}

#[derive(Deserialize)]
struct LogQuery {
    tail: Option<usize>,
}

async fn log(State(h): State<Handle>, Query(q): Query<LogQuery>) -> Result<impl IntoResponse, ServerError> {
    let mut body = h.log(q.tail.unwrap_or(200)).await?.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn stream(State(h): State<Handle>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| serve_stream(h, socket))
}

/// Outbound: framed run-log lines. Inbound: framed protocol messages,
/// routed like any device connection (an operator says hello first).
async fn serve_stream(h: Handle, mut socket: WebSocket) {
    let conn = h.conn_id();
    let mut lines = h.subscribe();
    let (tx, mut direct) = mpsc::unbounded_channel::<Vec<u8>>();
    h.send(Request::Connected { conn, tx });
    loop {
        tokio::select! {
            line = lines.recv() => match line {
                Ok(bytes) => {
                    if socket.send(Message::Binary(bytes)).await.is_err() {
                        break;
                    }
                }
                // the client sees the seq gap and re-fetches /state
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(bytes) = direct.recv() => {
                if socket.send(Message::Binary(bytes.into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Binary(b))) => {
                    let len = match b.get(..4) {
                        Some(h) => u32::from_be_bytes([h[0], h[1], h[2], h[3]]) as usize,
                        None => usize::MAX,
                    };
                    if len != usize::MAX && len > MAX_FRAME {
                        let detail = format!("frame of {len} bytes exceeds {MAX_FRAME}");
                        h.send(Request::Refused { conn, code: "E_OVERSIZE", detail });
                        return;
                    }
                    // one frame per message; anything else goes in whole and fails to decode
                    let bytes = if len == b.len().wrapping_sub(4) { b[4..].to_vec() } else { b.to_vec() };
                    h.send(Request::Payload { conn, bytes });
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    h.send(Request::Closed { conn });
}

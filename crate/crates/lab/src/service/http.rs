//! HTTP front-end: session listing/creation and the per-session socket.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

use super::protocol::{parse_client, RunStatus, ServerMessage};
use super::{SessionManager, StartRequest};

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/sessions", get(list).post(start))
        .route("/session/{id}", get(socket))
        .with_state(manager)
}

/// Serves until the listener fails or ctrl-c.
pub async fn serve(manager: Arc<SessionManager>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Binds on all interfaces at `port` (0 picks a free one).
pub async fn bind(port: u16) -> std::io::Result<TcpListener> {
    TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await
}

async fn list(State(m): State<Arc<SessionManager>>) -> Response {
    Json(m.list()).into_response()
}

async fn start(State(m): State<Arc<SessionManager>>, body: Option<Json<StartRequest>>) -> Response {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    // Fitting a cluster model can take seconds; keep it off the reactor.
    let result = tokio::task::spawn_blocking(move || m.start(&req).map(|id| m.info(id))).await;
    match result {
        Ok(Ok(Some(info))) => (StatusCode::CREATED, Json(info)).into_response(),
        Ok(Ok(None)) => StatusCode::INTERNAL_SERVER_ERROR.into_response(),
        Ok(Err(e)) => (
            StatusCode::BAD_REQUEST,
            Json(serde_json::json!({ "error": e.to_string() })),
        )
            .into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn socket(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<u64>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Response {
    if m.info(id).is_none() {
        return (StatusCode::NOT_FOUND, format!("unknown session {id}")).into_response();
    }
    let ws = match ws {
        Ok(ws) => ws,
        Err(rejection) => return rejection.into_response(),
    };
    let events = m.subscribe(id);
    ws.on_upgrade(move |socket| connection(m, id, events, socket))
}

async fn connection(
    m: Arc<SessionManager>,
    id: u64,
    events: Option<broadcast::Receiver<String>>,
    socket: WebSocket,
) {
    let (mut sink, mut stream) = socket.split();
    let (replies_tx, mut replies) = mpsc::unbounded_channel::<String>();

    let Some(info) = m.info(id) else {
        return;
    };
    let mut events = match events {
        Some(rx) if !matches!(info.status, RunStatus::Finished | RunStatus::Failed) => rx,
        _ => {
            let msg = match info.error {
                Some(e) => ServerMessage::error(e),
                None => ServerMessage::Finished {
                    stopped: false,
                    episodes: info.episodes_done,
                },
            };
            let _ = sink
                .send(Message::Text(SessionManager::envelope(id, msg).into()))
                .await;
            let _ = sink.close().await;
            return;
        }
    };

    // Subscribed before reading the cache, so the frame may arrive twice;
    // clients key on `step`.
    if let Some(frame) = m.latest_state(id) {
        if sink.send(Message::Text(frame.into())).await.is_err() {
            return;
        }
    }

    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                biased;
                reply = replies.recv() => match reply {
                    Some(t) => t,
                    None => break,
                },
                event = events.recv() => match event {
                    Ok(t) => t,
                    // Slow viewer: skip the frames it missed.
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match parse_client(&text) {
            Ok(cmd) => m.send(id, cmd).await,
            Err(e) => ServerMessage::error(e),
        };
        if replies_tx
            .send(SessionManager::envelope(id, reply))
            .is_err()
        {
            break;
        }
    }
    drop(replies_tx);
    let _ = writer.await;
}

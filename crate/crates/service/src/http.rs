//! HTTP and WebSocket routes.
//!
//! | route | |
//! |---|---|
//! | `POST /v1/sessions` | create; body `{"profile"?, "min_display_ms"?}` |
//! | `GET /v1/sessions/{id}/export` | glossary, feedback log, diagnostics |
//! | `GET /v1/sessions/{id}/stream?from_seq=N` | WebSocket, one JSON message per text frame |
//! | `GET /health` | liveness |

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use jargon_core::pipeline::{Mode, UserProfile};

use crate::protocol::ClientMessage;
use crate::runtime::Hub;
use crate::ServiceError;

pub fn router(hub: Hub) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/export", get(export))
        .route("/v1/sessions/{id}/stream", get(stream))
        .with_state(hub)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    hub: Hub,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(hub))
        .with_graceful_shutdown(shutdown)
        .await
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            Self::UnknownSession(_) => StatusCode::NOT_FOUND,
            Self::SessionEnded(_) => StatusCode::CONFLICT,
            Self::MalformedMessage(_) => StatusCode::BAD_REQUEST,
            Self::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        let body = json!({"error": self.code(), "message": self.to_string()});
        (status, Json(body)).into_response()
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub profile: Option<UserProfile>,
    #[serde(default)]
    pub min_display_ms: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub v: u32,
    pub session_id: String,
    pub mode: Mode,
}

async fn create_session(State(hub): State<Hub>, body: String) -> Result<Response, ServiceError> {
    let req: CreateRequest = if body.trim().is_empty() {
        CreateRequest::default()
    } else {
        serde_json::from_str(&body).map_err(|e| ServiceError::MalformedMessage(e.to_string()))?
    };
    let created = hub.create_session(req.profile, req.min_display_ms).await?;
    let body = CreateResponse {
        v: crate::protocol::PROTOCOL_VERSION,
        session_id: created.session_id,
        mode: created.mode,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn export(State(hub): State<Hub>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(hub.export(&id).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    from_seq: u64,
}

async fn stream(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Query(query): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    if !hub.exists(&id).await? {
        return Err(ServiceError::UnknownSession(id));
    }
    Ok(ws.on_upgrade(move |socket| connection(socket, hub, id, query.from_seq)))
}

async fn connection(mut socket: WebSocket, hub: Hub, id: String, from_seq: u64) {
    let (tx, mut outbound) = mpsc::unbounded_channel();
    if let Err(err) = hub.attach(&id, from_seq, tx).await {
        tracing::warn!(session = %id, %err, "attach failed");
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    loop {
        tokio::select! {
            out = outbound.recv() => match out {
                Some(msg) => {
                    if socket.send(Message::Text(msg.to_json().into())).await.is_err() {
                        break;
                    }
                }
                // Replaced by a newer connection, or the session could not commit.
                None => {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            },
            frame = socket.recv() => {
                let result = match frame {
                    Some(Ok(Message::Text(text))) => match ClientMessage::parse(&text) {
                        Ok(msg) => hub.post(&id, msg).await,
                        Err(detail) => hub.post_malformed(&id, detail).await,
                    },
                    Some(Ok(Message::Binary(_))) => {
                        hub.post_malformed(&id, "binary frames are not accepted".into()).await
                    }
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => Ok(()),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                };
                if let Err(err) = result {
                    tracing::warn!(session = %id, %err, "dropping connection");
                    break;
                }
            }
        }
    }
}

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use jargon_core::gateway::{Gateway, MockProvider, RetryPolicy};
use jargon_core::ingest::{load_replay, ReplayRecord};
use jargon_core::pipeline::UserProfile;
use jargon_service::http::{serve, CreateResponse};
use jargon_service::protocol::{ClientMessage, ServerEvent, ServerMessage};
use jargon_service::runtime::RuntimeSettings;
use jargon_service::{Hub, SessionExport, SessionStore};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/earth_science")
}

pub fn transcript() -> Vec<ReplayRecord> {
    load_replay(fixtures().join("transcript.jsonl")).unwrap()
}

pub fn profile(name: &str) -> UserProfile {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join(name)).unwrap()).unwrap()
}

pub fn mock_gateway() -> Arc<Gateway> {
    let mock = MockProvider::load(fixtures().join("mock")).unwrap();
    Arc::new(Gateway::new(Arc::new(mock)).with_retry(RetryPolicy::no_retry()))
}

/// Caption-driven clock; no wall-clock ticks.
pub const REPLAY_SETTINGS: RuntimeSettings = RuntimeSettings {
    tick_ms: 0,
    min_display_ms: 7000,
    silence_flush_ms: 5000,
};

pub struct Server {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(store: Arc<dyn SessionStore>, settings: RuntimeSettings) -> Self {
        let hub = Hub::new(mock_gateway(), store, settings);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = oneshot::channel::<()>();
        let task = tokio::spawn(serve(listener, hub, async {
            let _ = stopped.await;
        }));
        Self {
            addr,
            stop: Some(stop),
            task,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn ws_url(&self, id: &str, from_seq: u64) -> String {
        format!(
            "ws://{}/v1/sessions/{id}/stream?from_seq={from_seq}",
            self.addr
        )
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap().unwrap();
    }

    pub async fn create(&self, body: serde_json::Value) -> CreateResponse {
        let resp = reqwest::Client::new()
            .post(self.url("/v1/sessions"))
            .json(&body)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 201);
        resp.json().await.unwrap()
    }

    pub async fn export_text(&self, id: &str) -> (u16, String) {
        let resp = reqwest::get(self.url(&format!("/v1/sessions/{id}/export")))
            .await
            .unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    pub async fn export(&self, id: &str) -> SessionExport {
        let (status, text) = self.export_text(id).await;
        assert_eq!(status, 200, "{text}");
        serde_json::from_str(&text).unwrap()
    }
}

pub type Socket =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

pub async fn connect(url: &str) -> Socket {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

pub async fn send(socket: &mut Socket, msg: &ClientMessage) {
    let text = serde_json::to_string(msg).unwrap();
    socket.send(Message::text(text)).await.unwrap();
}

/// Next server message, or `None` once the server closes the stream.
pub async fn recv(socket: &mut Socket) -> Option<ServerMessage> {
    loop {
        match socket.next().await? {
            Ok(Message::Text(text)) => return Some(serde_json::from_str(&text).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

pub async fn recv_until_ended(socket: &mut Socket) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    while let Some(msg) = recv(socket).await {
        let done = matches!(msg.event, ServerEvent::SessionEnded { .. });
        out.push(msg);
        if done {
            break;
        }
    }
    out
}

/// Streams every record and ends the session; returns all messages received.
pub async fn stream_transcript(
    server: &Server,
    id: &str,
    records: &[ReplayRecord],
) -> Vec<ServerMessage> {
    let mut socket = connect(&server.ws_url(id, 0)).await;
    for record in records {
        send(
            &mut socket,
            &ClientMessage::caption(record.text.clone(), record.t_ms),
        )
        .await;
    }
    send(&mut socket, &ClientMessage::end_session()).await;
    let out = recv_until_ended(&mut socket).await;
    let _ = socket.close(None).await;
    out
}

pub fn is_gapless(messages: &[ServerMessage]) -> bool {
    messages.iter().enumerate().all(|(i, m)| m.seq == i as u64)
}

pub fn db_path(dir: &Path) -> PathBuf {
    dir.join("sessions.db")
}

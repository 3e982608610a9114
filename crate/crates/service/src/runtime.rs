//! Per-session actors.
//!
//! Every session has one task that owns its [`Session`] and handles commands
//! and clock ticks in arrival order. Messages are committed to the store
//! before they are handed to the attached connection.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::sync::{mpsc, oneshot};
use tokio::time::{Instant, MissedTickBehavior};

use jargon_core::gateway::Gateway;
use jargon_core::pipeline::{Mode, UserProfile};

use crate::config::ServiceConfig;
use crate::protocol::{ClientMessage, ServerMessage};
use crate::session::{Session, SessionExport, SessionSettings};
use crate::store::SessionStore;
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeSettings {
    pub tick_ms: u64,
    pub min_display_ms: u64,
    pub silence_flush_ms: u64,
}

impl From<&ServiceConfig> for RuntimeSettings {
    fn from(c: &ServiceConfig) -> Self {
        Self {
            tick_ms: c.tick_ms,
            min_display_ms: c.min_display_ms,
            silence_flush_ms: c.silence_flush_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreatedSession {
    pub session_id: String,
    pub mode: Mode,
}

/// Outbound half of an attached connection.
pub type Outbox = mpsc::UnboundedSender<ServerMessage>;

enum Command {
    Client {
        msg: ClientMessage,
        reply: Option<oneshot::Sender<Vec<ServerMessage>>>,
    },
    Malformed {
        detail: String,
    },
    Attach {
        from_seq: u64,
        outbox: Outbox,
        reply: oneshot::Sender<Result<(), ServiceError>>,
    },
    Export {
        reply: oneshot::Sender<SessionExport>,
    },
}

struct Shared {
    gateway: Arc<Gateway>,
    store: Arc<dyn SessionStore>,
    settings: RuntimeSettings,
    actors: Mutex<HashMap<String, mpsc::UnboundedSender<Command>>>,
}

/// Entry point for all session operations; cheap to clone.
#[derive(Clone)]
pub struct Hub {
    shared: Arc<Shared>,
}

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Hub {
    pub fn new(
        gateway: Arc<Gateway>,
        store: Arc<dyn SessionStore>,
        settings: RuntimeSettings,
    ) -> Self {
        Self {
            shared: Arc::new(Shared {
                gateway,
                store,
                settings,
                actors: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.shared.gateway
    }

    pub async fn create_session(
        &self,
        profile: Option<UserProfile>,
        min_display_ms: Option<u64>,
    ) -> Result<CreatedSession, ServiceError> {
        let settings = SessionSettings {
            min_display_ms: min_display_ms.unwrap_or(self.shared.settings.min_display_ms),
            silence_flush_ms: self.shared.settings.silence_flush_ms,
        };
        let id = uuid::Uuid::new_v4().to_string();
        let session = Session::new(
            id.clone(),
            epoch_ms(),
            profile.unwrap_or_default(),
            settings,
        );
        let store = self.shared.store.clone();
        let session =
            tokio::task::spawn_blocking(move || store.insert_session(&session).map(|()| session))
                .await
                .expect("store task panicked")?;
        let created = CreatedSession {
            session_id: id.clone(),
            mode: session.record().mode,
        };
        self.spawn(session);
        tracing::info!(session = %id, mode = ?created.mode, "session created");
        Ok(created)
    }

    fn spawn(&self, session: Session) -> mpsc::UnboundedSender<Command> {
        let (tx, rx) = mpsc::unbounded_channel();
        let id = session.id().to_string();
        self.shared.actors.lock().unwrap().insert(id, tx.clone());
        tokio::spawn(run_actor(self.shared.clone(), session, rx));
        tx
    }

    /// The actor for `id`, restoring it from the store when needed.
    async fn actor(&self, id: &str) -> Result<mpsc::UnboundedSender<Command>, ServiceError> {
        if let Some(tx) = self.shared.actors.lock().unwrap().get(id) {
            return Ok(tx.clone());
        }
        let store = self.shared.store.clone();
        let key = id.to_string();
        let loaded = tokio::task::spawn_blocking(move || store.load_session(&key))
            .await
            .expect("store task panicked")?;
        let session = loaded.ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        // Another request may have restored it while the store was read.
        if let Some(tx) = self.shared.actors.lock().unwrap().get(id) {
            return Ok(tx.clone());
        }
        tracing::info!(session = %id, "session restored from store");
        Ok(self.spawn(session))
    }

    pub async fn exists(&self, id: &str) -> Result<bool, ServiceError> {
        match self.actor(id).await {
            Ok(_) => Ok(true),
            Err(ServiceError::UnknownSession(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Applies a client message and returns the server messages it produced.
    pub async fn send(
        &self,
        id: &str,
        msg: ClientMessage,
    ) -> Result<Vec<ServerMessage>, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.command(
            id,
            Command::Client {
                msg,
                reply: Some(reply),
            },
        )
        .await?;
        rx.await.map_err(|_| closed(id))
    }

    /// Like [`Hub::send`] without waiting for the result.
    pub async fn post(&self, id: &str, msg: ClientMessage) -> Result<(), ServiceError> {
        self.command(id, Command::Client { msg, reply: None }).await
    }

    /// Reports an unparseable frame as a sequenced diagnostic.
    pub async fn post_malformed(&self, id: &str, detail: String) -> Result<(), ServiceError> {
        self.command(id, Command::Malformed { detail }).await
    }

    /// Makes `outbox` the session's connection, first replaying logged
    /// messages from `from_seq`. A previous connection's outbox is dropped.
    pub async fn attach(
        &self,
        id: &str,
        from_seq: u64,
        outbox: Outbox,
    ) -> Result<(), ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.command(
            id,
            Command::Attach {
                from_seq,
                outbox,
                reply,
            },
        )
        .await?;
        rx.await.map_err(|_| closed(id))?
    }

    pub async fn export(&self, id: &str) -> Result<SessionExport, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.command(id, Command::Export { reply }).await?;
        rx.await.map_err(|_| closed(id))
    }

    async fn command(&self, id: &str, cmd: Command) -> Result<(), ServiceError> {
        self.actor(id).await?.send(cmd).map_err(|_| closed(id))
    }
}

fn closed(id: &str) -> ServiceError {
    ServiceError::Storage(crate::StorageError::Unavailable(format!(
        "session {id} actor stopped"
    )))
}

struct Actor {
    shared: Arc<Shared>,
    session: Session,
    outbox: Option<Outbox>,
    /// Wall-clock instant corresponding to session time `clock_base_ms`.
    started: Instant,
    clock_base_ms: u64,
}

impl Actor {
    fn wall_ms(&self) -> u64 {
        self.clock_base_ms + self.started.elapsed().as_millis() as u64
    }

    /// Session time for a command. With ticks disabled only caption
    /// timestamps move the clock.
    fn now_ms(&self) -> u64 {
        if self.shared.settings.tick_ms == 0 {
            self.session.clock_ms()
        } else {
            self.wall_ms().max(self.session.clock_ms())
        }
    }

    async fn persist(&self, messages: &[ServerMessage]) -> Result<(), ServiceError> {
        let store = self.shared.store.clone();
        let snapshot = self.session.clone();
        let messages = messages.to_vec();
        tokio::task::spawn_blocking(move || store.commit(&snapshot, &messages))
            .await
            .expect("store task panicked")?;
        Ok(())
    }

    async fn deliver(&mut self, messages: Vec<ServerMessage>) -> Vec<ServerMessage> {
        if messages.is_empty() {
            return messages;
        }
        if let Err(err) = self.persist(&messages).await {
            // Unlogged messages would leave a gap on replay, so the connection
            // is dropped and the client resumes from what was committed.
            tracing::error!(session = %self.session.id(), %err, "commit failed");
            self.outbox = None;
            return messages;
        }
        if let Some(outbox) = &self.outbox {
            for msg in &messages {
                if outbox.send(msg.clone()).is_err() {
                    self.outbox = None;
                    break;
                }
            }
        }
        messages
    }

    async fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Client { msg, reply } => {
                let now = self.now_ms();
                let out = match self.session.handle(msg, &self.shared.gateway, now).await {
                    Ok(out) => out,
                    Err(err) => vec![self.session.reject(&err)],
                };
                let out = self.deliver(out).await;
                if let Some(reply) = reply {
                    let _ = reply.send(out);
                }
            }
            Command::Malformed { detail } => {
                let msg = self.session.reject(&ServiceError::MalformedMessage(detail));
                self.deliver(vec![msg]).await;
            }
            Command::Attach {
                from_seq,
                outbox,
                reply,
            } => {
                let store = self.shared.store.clone();
                let id = self.session.id().to_string();
                let backlog =
                    tokio::task::spawn_blocking(move || store.messages_since(&id, from_seq))
                        .await
                        .expect("store task panicked");
                match backlog {
                    Ok(backlog) => {
                        let delivered = backlog.into_iter().all(|m| outbox.send(m).is_ok());
                        self.outbox = delivered.then_some(outbox);
                        let _ = reply.send(Ok(()));
                    }
                    Err(err) => {
                        let _ = reply.send(Err(err.into()));
                    }
                }
            }
            Command::Export { reply } => {
                let _ = reply.send(self.session.export());
            }
        }
    }

    async fn tick(&mut self) {
        if !self.session.is_live() {
            return;
        }
        let now = self.now_ms();
        let out = self.session.tick(&self.shared.gateway, now).await;
        self.deliver(out).await;
    }
}

async fn run_actor(
    shared: Arc<Shared>,
    session: Session,
    mut rx: mpsc::UnboundedReceiver<Command>,
) {
    let tick_ms = shared.settings.tick_ms;
    let mut actor = Actor {
        clock_base_ms: session.clock_ms(),
        started: Instant::now(),
        shared,
        session,
        outbox: None,
    };
    let mut ticker = tokio::time::interval(Duration::from_millis(tick_ms.max(1)));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            biased;
            cmd = rx.recv() => match cmd {
                Some(cmd) => actor.handle(cmd).await,
                None => break,
            },
            _ = ticker.tick(), if tick_ms > 0 && actor.session.is_live() => actor.tick().await,
        }
    }
}

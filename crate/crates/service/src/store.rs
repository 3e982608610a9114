//! Session persistence.
//!
//! A session is stored as a JSON snapshot plus its append-only log of server
//! messages. [`SessionStore::commit`] writes both in one transaction.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension};
use thiserror::Error;

use crate::protocol::ServerMessage;
use crate::session::{Session, SessionStatus};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("session {0} already exists")]
    Duplicate(String),
    #[error("corrupt record for session {id}: {message}")]
    Corrupt { id: String, message: String },
}

impl From<rusqlite::Error> for StorageError {
    fn from(err: rusqlite::Error) -> Self {
        Self::Unavailable(err.to_string())
    }
}

pub trait SessionStore: Send + Sync {
    fn insert_session(&self, session: &Session) -> Result<(), StorageError>;
    /// Replaces the snapshot and appends `messages` atomically.
    fn commit(&self, session: &Session, messages: &[ServerMessage]) -> Result<(), StorageError>;
    fn load_session(&self, id: &str) -> Result<Option<Session>, StorageError>;
    /// Logged messages with `seq >= from_seq`, in order.
    fn messages_since(&self, id: &str, from_seq: u64) -> Result<Vec<ServerMessage>, StorageError>;
    fn session_ids(&self) -> Result<Vec<String>, StorageError>;
}

fn encode<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("session data serializes")
}

fn decode<T: serde::de::DeserializeOwned>(id: &str, text: &str) -> Result<T, StorageError> {
    serde_json::from_str(text).map_err(|e| StorageError::Corrupt {
        id: id.to_string(),
        message: e.to_string(),
    })
}

fn status_str(status: SessionStatus) -> &'static str {
    match status {
        SessionStatus::Live => "live",
        SessionStatus::Ended => "ended",
    }
}

/// Keeps everything in process memory, serialized the same way as on disk.
#[derive(Debug, Default)]
pub struct MemoryStore {
    inner: Mutex<HashMap<String, (String, Vec<String>)>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn insert_session(&self, session: &Session) -> Result<(), StorageError> {
        let mut map = self.inner.lock().unwrap();
        if map.contains_key(session.id()) {
            return Err(StorageError::Duplicate(session.id().to_string()));
        }
        map.insert(session.id().to_string(), (encode(session), Vec::new()));
        Ok(())
    }

    fn commit(&self, session: &Session, messages: &[ServerMessage]) -> Result<(), StorageError> {
        let mut map = self.inner.lock().unwrap();
        let (snapshot, log) = map
            .get_mut(session.id())
            .ok_or_else(|| StorageError::Unavailable(format!("no row for {}", session.id())))?;
        *snapshot = encode(session);
        log.extend(messages.iter().map(encode));
        Ok(())
    }

    fn load_session(&self, id: &str) -> Result<Option<Session>, StorageError> {
        let map = self.inner.lock().unwrap();
        map.get(id).map(|(s, _)| decode(id, s)).transpose()
    }

    fn messages_since(&self, id: &str, from_seq: u64) -> Result<Vec<ServerMessage>, StorageError> {
        let map = self.inner.lock().unwrap();
        let Some((_, log)) = map.get(id) else {
            return Ok(Vec::new());
        };
        log.iter()
            .skip(usize::try_from(from_seq).unwrap_or(usize::MAX))
            .map(|m| decode(id, m))
            .collect()
    }

    fn session_ids(&self) -> Result<Vec<String>, StorageError> {
        let mut ids: Vec<String> = self.inner.lock().unwrap().keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS sessions (
    id TEXT PRIMARY KEY,
    created_at INTEGER NOT NULL,
    status TEXT NOT NULL,
    snapshot TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS messages (
    session_id TEXT NOT NULL REFERENCES sessions(id),
    seq INTEGER NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (session_id, seq)
);
";

#[derive(Debug)]
pub struct SqliteStore {
    conn: Mutex<Connection>,
}

impl SqliteStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, StorageError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StorageError> {
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }
}

impl SessionStore for SqliteStore {
    fn insert_session(&self, session: &Session) -> Result<(), StorageError> {
        let conn = self.conn.lock().unwrap();
        let record = session.record();
        let inserted = conn.execute(
            "INSERT OR IGNORE INTO sessions (id, created_at, status, snapshot) VALUES (?1, ?2, ?3, ?4)",
            params![
                record.session_id,
                record.created_at as i64,
                status_str(record.status),
                encode(session)
            ],
        )?;
        if inserted == 0 {
            return Err(StorageError::Duplicate(record.session_id.clone()));
        }
        Ok(())
    }

    fn commit(&self, session: &Session, messages: &[ServerMessage]) -> Result<(), StorageError> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        let updated = tx.execute(
            "UPDATE sessions SET status = ?2, snapshot = ?3 WHERE id = ?1",
            params![
                session.id(),
                status_str(session.record().status),
                encode(session)
            ],
        )?;
        if updated == 0 {
            return Err(StorageError::Unavailable(format!(
                "no row for {}",
                session.id()
            )));
        }
        {
            let mut insert = tx.prepare_cached(
                "INSERT INTO messages (session_id, seq, body) VALUES (?1, ?2, ?3)",
            )?;
            for msg in messages {
                insert.execute(params![msg.session_id, msg.seq as i64, encode(msg)])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn load_session(&self, id: &str) -> Result<Option<Session>, StorageError> {
        let conn = self.conn.lock().unwrap();
        let snapshot: Option<String> = conn
            .query_row("SELECT snapshot FROM sessions WHERE id = ?1", [id], |r| {
                r.get(0)
            })
            .optional()?;
        snapshot.map(|s| decode(id, &s)).transpose()
    }

    fn messages_since(&self, id: &str, from_seq: u64) -> Result<Vec<ServerMessage>, StorageError> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare_cached(
            "SELECT body FROM messages WHERE session_id = ?1 AND seq >= ?2 ORDER BY seq",
        )?;
        let from = i64::try_from(from_seq).unwrap_or(i64::MAX);
        let bodies = stmt
            .query_map(params![id, from], |r| r.get::<_, String>(0))?
            .collect::<Result<Vec<_>, _>>()?;
        bodies.iter().map(|b| decode(id, b)).collect()
    }

    fn session_ids(&self) -> Result<Vec<String>, StorageError> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare("SELECT id FROM sessions ORDER BY id")?;
        let ids = stmt
            .query_map([], |r| r.get(0))?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ids)
    }
}

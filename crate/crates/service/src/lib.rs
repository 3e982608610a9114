//! Session service for live jargon assistance.
//!
//! Each session runs in its own actor that serializes caption chunks,
//! feedback and clock ticks. Every server message and a snapshot of the
//! session are committed to a [`store::SessionStore`] before delivery, so a
//! reconnecting client can resume from any sequence number and a restarted
//! server picks up where it left off.

pub mod config;
pub mod http;
pub mod protocol;
pub mod runtime;
pub mod session;
pub mod store;

use thiserror::Error;

pub use config::ServiceConfig;
pub use runtime::Hub;
pub use session::{Session, SessionExport, SessionStatus};
pub use store::{MemoryStore, SessionStore, SqliteStore, StorageError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} has ended")]
    SessionEnded(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl ServiceError {
    /// Diagnostic code used when the error is reported on the stream.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "unknown_session",
            Self::SessionEnded(_) => "session_ended",
            Self::MalformedMessage(_) => "malformed_message",
            Self::Storage(_) => "storage_unavailable",
        }
    }
}

//! Wire schema of the streaming endpoint.
//!
//! Every frame is one UTF-8 JSON object carrying `"v": 1`. Server frames are
//! enveloped with the session id and a per-session sequence number that
//! starts at 0 and has no gaps, so a client can detect loss and reconnect
//! with `from_seq`.

use serde::{Deserialize, Serialize};

use jargon_core::pipeline::{Diagnostic, Mode, TermEntry, UserProfile, Verdict};
use jargon_core::scheduler::DisplayChange;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientPayload {
    CaptionChunk {
        text: String,
        t_ms: u64,
    },
    Feedback {
        key: String,
        verdict: Verdict,
        #[serde(default)]
        at_ms: u64,
    },
    SetProfile {
        profile: UserProfile,
    },
    EndSession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(flatten)]
    pub payload: ClientPayload,
}

impl ClientMessage {
    pub fn new(payload: ClientPayload) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            session_id: None,
            payload,
        }
    }

    pub fn caption(text: impl Into<String>, t_ms: u64) -> Self {
        Self::new(ClientPayload::CaptionChunk {
            text: text.into(),
            t_ms,
        })
    }

    pub fn feedback(key: impl Into<String>, verdict: Verdict, at_ms: u64) -> Self {
        Self::new(ClientPayload::Feedback {
            key: key.into(),
            verdict,
            at_ms,
        })
    }

    pub fn end_session() -> Self {
        Self::new(ClientPayload::EndSession)
    }

    /// Parses a client frame, checking the protocol version.
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if msg.v != PROTOCOL_VERSION {
            return Err(format!("unsupported protocol version {}", msg.v));
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentData {
    pub seq: u64,
    pub text: String,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanData {
    pub start: usize,
    pub end: usize,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum ServerEvent {
    Segment(SegmentData),
    NewTerm(TermEntry),
    DisplayChange(DisplayChange),
    UnderstoodDropped {
        seq: u64,
        terms: Vec<String>,
    },
    /// Character spans (offsets into the segment text) of glossary terms.
    Highlight {
        seq: u64,
        spans: Vec<SpanData>,
    },
    Diagnostic(Diagnostic),
    FeedbackAck {
        key: String,
        verdict: Verdict,
    },
    ProfileUpdated {
        mode: Mode,
    },
    SessionEnded {
        term_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub event: ServerEvent,
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

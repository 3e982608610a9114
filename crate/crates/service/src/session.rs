//! One meeting session as a state machine over client messages and clock ticks.

use serde::{Deserialize, Serialize};

use jargon_core::gateway::Gateway;
use jargon_core::ingest::{CaptionChunk, SegmentationBuffer, TranscriptSegment};
use jargon_core::pipeline::{
    Diagnostic, FeedbackEvent, GlossaryRecord, Mode, PipelineDelta, SessionState, UserProfile,
};
use jargon_core::scheduler::DisplayState;

use crate::protocol::{
    ClientMessage, ClientPayload, SegmentData, ServerEvent, ServerMessage, SpanData,
    PROTOCOL_VERSION,
};
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Live,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub mode: Mode,
    pub profile: UserProfile,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionExport {
    pub session_id: String,
    pub mode: Mode,
    pub status: SessionStatus,
    pub glossary: Vec<GlossaryRecord>,
    pub feedback_log: Vec<FeedbackEvent>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub min_display_ms: u64,
    pub silence_flush_ms: u64,
}

/// All per-session state; serialized as a whole into the store after every event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    record: SessionRecord,
    buffer: SegmentationBuffer,
    state: SessionState,
    display: DisplayState,
    next_server_seq: u64,
    clock_ms: u64,
}

impl Session {
    pub fn new(
        session_id: String,
        created_at: u64,
        profile: UserProfile,
        settings: SessionSettings,
    ) -> Self {
        let state = SessionState::new(session_id.clone(), profile);
        Self {
            record: SessionRecord {
                session_id: session_id.clone(),
                created_at,
                mode: state.mode(),
                profile: state.profile().clone(),
                status: SessionStatus::Live,
            },
            buffer: SegmentationBuffer::with_silence_flush(session_id, settings.silence_flush_ms),
            state,
            display: DisplayState::new(settings.min_display_ms),
            next_server_seq: 0,
            clock_ms: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.record.session_id
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn is_live(&self) -> bool {
        self.record.status == SessionStatus::Live
    }

    pub fn next_server_seq(&self) -> u64 {
        self.next_server_seq
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn display(&self) -> &DisplayState {
        &self.display
    }

    pub fn export(&self) -> SessionExport {
        SessionExport {
            session_id: self.record.session_id.clone(),
            mode: self.record.mode,
            status: self.record.status,
            glossary: self.state.export_glossary(),
            feedback_log: self.state.feedback_log().to_vec(),
            diagnostics: self.state.diagnostics().to_vec(),
        }
    }

    fn emit(&mut self, out: &mut Vec<ServerMessage>, event: ServerEvent) {
        out.push(ServerMessage {
            v: PROTOCOL_VERSION,
            session_id: self.record.session_id.clone(),
            seq: self.next_server_seq,
            event,
        });
        self.next_server_seq += 1;
    }

    fn advance(&mut self, now_ms: u64) -> u64 {
        self.clock_ms = self.clock_ms.max(now_ms);
        self.clock_ms
    }

    fn diagnostic(&mut self, out: &mut Vec<ServerMessage>, code: &str, message: String) {
        let event = ServerEvent::Diagnostic(Diagnostic {
            seq: None,
            code: code.to_string(),
            message,
        });
        self.emit(out, event);
    }

    /// A sequenced diagnostic for a rejected client message.
    pub fn reject(&mut self, error: &ServiceError) -> ServerMessage {
        let mut out = Vec::new();
        self.diagnostic(&mut out, error.code(), error.to_string());
        out.pop().expect("one message")
    }

    /// Applies one client message; `now_ms` is the session clock.
    pub async fn handle(
        &mut self,
        msg: ClientMessage,
        gateway: &Gateway,
        now_ms: u64,
    ) -> Result<Vec<ServerMessage>, ServiceError> {
        if !self.is_live() {
            return Err(ServiceError::SessionEnded(self.record.session_id.clone()));
        }
        if let Some(id) = &msg.session_id {
            if *id != self.record.session_id {
                return Err(ServiceError::MalformedMessage(format!(
                    "message for session {id} sent to {}",
                    self.record.session_id
                )));
            }
        }
        let mut out = Vec::new();
        match msg.payload {
            ClientPayload::CaptionChunk { text, t_ms } => {
                let chunk = CaptionChunk::new(self.record.session_id.clone(), text, t_ms);
                if self.buffer.last_seen_ms().is_none_or(|last| t_ms >= last) {
                    // Catch up on silence and dwell timers up to the chunk's timestamp.
                    let now = self.advance(now_ms.max(t_ms));
                    self.step_clock(gateway, now, &mut out).await;
                }
                match self.buffer.ingest(&chunk) {
                    Ok(segments) => {
                        let now = self.clock_ms;
                        for segment in segments {
                            self.run_segment(segment, gateway, now, &mut out).await;
                        }
                    }
                    Err(err) => self.diagnostic(&mut out, "rejected_chunk", err.to_string()),
                }
            }
            ClientPayload::Feedback {
                key,
                verdict,
                at_ms,
            } => {
                let event = FeedbackEvent {
                    key: key.clone(),
                    verdict,
                    at_ms,
                };
                match self.state.apply_feedback(event) {
                    Ok(()) => {
                        let key = self
                            .state
                            .feedback_log()
                            .last()
                            .map_or(key, |e| e.key.clone());
                        self.record.profile = self.state.profile().clone();
                        self.emit(&mut out, ServerEvent::FeedbackAck { key, verdict });
                    }
                    Err(err) => self.diagnostic(&mut out, "unknown_term", err.to_string()),
                }
            }
            ClientPayload::SetProfile { profile } => {
                self.state.set_profile(profile);
                self.record.profile = self.state.profile().clone();
                self.record.mode = self.state.mode();
                let mode = self.record.mode;
                self.emit(&mut out, ServerEvent::ProfileUpdated { mode });
            }
            ClientPayload::EndSession => {
                let now = self.advance(now_ms);
                if let Some(segment) = self.buffer.finish() {
                    self.run_segment(segment, gateway, now, &mut out).await;
                }
                self.record.status = SessionStatus::Ended;
                let term_count = self.state.glossary().len();
                self.emit(&mut out, ServerEvent::SessionEnded { term_count });
            }
        }
        Ok(out)
    }

    /// Clock tick: flushes a stalled fragment and advances the display queue.
    pub async fn tick(&mut self, gateway: &Gateway, now_ms: u64) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        if !self.is_live() {
            return out;
        }
        let now = self.advance(now_ms);
        self.step_clock(gateway, now, &mut out).await;
        out
    }

    async fn step_clock(&mut self, gateway: &Gateway, now: u64, out: &mut Vec<ServerMessage>) {
        if let Some(segment) = self.buffer.flush(now) {
            self.run_segment(segment, gateway, now, out).await;
        }
        if let Some(change) = self.display.tick(now) {
            self.emit(out, ServerEvent::DisplayChange(change));
        }
    }

    #[cfg(test)]
    pub(crate) fn force_clock(&mut self, ms: u64) {
        self.clock_ms = ms;
    }

    /// Emits, in order: segment, new_term*, display_change*, understood_dropped,
    /// highlight, diagnostic.
    async fn run_segment(
        &mut self,
        segment: TranscriptSegment,
        gateway: &Gateway,
        now_ms: u64,
        out: &mut Vec<ServerMessage>,
    ) {
        self.emit(
            out,
            ServerEvent::Segment(SegmentData {
                seq: segment.seq,
                text: segment.text.clone(),
                t_start_ms: segment.t_start_ms,
                t_end_ms: segment.t_end_ms,
            }),
        );
        let delta = match self
            .state
            .process_segment(&segment, gateway, segment.t_end_ms)
            .await
        {
            Ok(delta) => delta,
            Err(err) => PipelineDelta {
                diagnostic: Some(Diagnostic {
                    seq: Some(segment.seq),
                    code: "pipeline_error".into(),
                    message: err.to_string(),
                }),
                ..PipelineDelta::default()
            },
        };

        let mut changes = Vec::new();
        for entry in &delta.new_entries {
            self.emit(out, ServerEvent::NewTerm(entry.clone()));
            match self.display.push_term(entry.key.clone(), now_ms) {
                Ok(change) => changes.extend(change),
                Err(err) => tracing::error!(%err, "glossary key offered to display twice"),
            }
        }
        for change in changes {
            self.emit(out, ServerEvent::DisplayChange(change));
        }
        if !delta.understood_dropped.is_empty() {
            self.emit(
                out,
                ServerEvent::UnderstoodDropped {
                    seq: segment.seq,
                    terms: delta.understood_dropped,
                },
            );
        }
        if !delta.highlights.is_empty() {
            let spans = delta
                .highlights
                .into_iter()
                .map(|h| SpanData {
                    start: h.start,
                    end: h.end,
                    key: h.key,
                })
                .collect();
            self.emit(
                out,
                ServerEvent::Highlight {
                    seq: segment.seq,
                    spans,
                },
            );
        }
        if let Some(diagnostic) = delta.diagnostic {
            self.emit(out, ServerEvent::Diagnostic(diagnostic));
        }
    }
}

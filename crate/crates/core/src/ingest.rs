//! Caption ingestion: chunk streams and replay files to sentence segments.
//!
//! Chunks are concatenated as if separated by whitespace, whitespace runs are
//! collapsed, and a sentence closes after `.`, `!` or `?` when followed by
//! whitespace or by the end of a chunk. Abbreviations are not special-cased.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default silence after which a trailing fragment is emitted as a segment.
pub const DEFAULT_SILENCE_FLUSH_MS: u64 = 5000;

/// A piece of caption text as delivered by a live feed or a replay file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionChunk {
    pub session_id: String,
    pub text: String,
    pub t_ms: u64,
}

impl CaptionChunk {
    pub fn new(session_id: impl Into<String>, text: impl Into<String>, t_ms: u64) -> Self {
        Self {
            session_id: session_id.into(),
            text: text.into(),
            t_ms,
        }
    }
}

/// One complete, whitespace-normalized sentence of meeting speech.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub session_id: String,
    pub seq: u64,
    pub text: String,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("chunk at t={got}ms arrived after t={previous}ms")]
    OutOfOrderChunk { previous: u64, got: u64 },
    #[error("chunk for session {got:?} sent to buffer of session {expected:?}")]
    SessionMismatch { expected: String, got: String },
}

/// Collapses whitespace runs to single spaces and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Per-session segmentation state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationBuffer {
    session_id: String,
    pending: String,
    pending_start_ms: u64,
    last_seen_ms: Option<u64>,
    last_speech_ms: Option<u64>,
    next_seq: u64,
    silence_flush_ms: u64,
}

impl SegmentationBuffer {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self::with_silence_flush(session_id, DEFAULT_SILENCE_FLUSH_MS)
    }

    pub fn with_silence_flush(session_id: impl Into<String>, silence_flush_ms: u64) -> Self {
        Self {
            session_id: session_id.into(),
            pending: String::new(),
            pending_start_ms: 0,
            last_seen_ms: None,
            last_speech_ms: None,
            next_seq: 0,
            silence_flush_ms,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// The buffered, not yet terminated fragment.
    pub fn pending(&self) -> &str {
        &self.pending
    }

    /// Sequence number the next emitted segment will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn last_seen_ms(&self) -> Option<u64> {
        self.last_seen_ms
    }

    /// Appends a chunk and returns every sentence it completes.
    ///
    /// On error the buffer is left untouched.
    pub fn ingest(&mut self, chunk: &CaptionChunk) -> Result<Vec<TranscriptSegment>, IngestError> {
        if chunk.session_id != self.session_id {
            return Err(IngestError::SessionMismatch {
                expected: self.session_id.clone(),
                got: chunk.session_id.clone(),
            });
        }
        if let Some(previous) = self.last_seen_ms {
            if chunk.t_ms < previous {
                return Err(IngestError::OutOfOrderChunk {
                    previous,
                    got: chunk.t_ms,
                });
            }
        }
        self.last_seen_ms = Some(chunk.t_ms);

        let text = normalize_whitespace(&chunk.text);
        if text.is_empty() {
            return Ok(Vec::new());
        }
        self.last_speech_ms = Some(chunk.t_ms);

        let mut segments = Vec::new();
        let mut chars = text.chars().peekable();
        if !self.pending.is_empty() {
            self.pending.push(' ');
        }
        while let Some(c) = chars.next() {
            if self.pending.is_empty() {
                if c == ' ' {
                    continue;
                }
                self.pending_start_ms = chunk.t_ms;
            }
            self.pending.push(c);
            let closes = is_terminal(c) && chars.peek().is_none_or(|next| *next == ' ');
            if closes {
                segments.push(self.take_segment(chunk.t_ms));
            }
        }
        Ok(segments)
    }

    /// Emits the pending fragment if speech has been silent for at least the
    /// configured flush interval.
    pub fn flush(&mut self, now_ms: u64) -> Option<TranscriptSegment> {
        if self.pending.is_empty() {
            return None;
        }
        let last = self.last_speech_ms.unwrap_or(self.pending_start_ms);
        if now_ms.saturating_sub(last) >= self.silence_flush_ms {
            Some(self.take_segment(last))
        } else {
            None
        }
    }

    /// Emits the pending fragment unconditionally (end of session).
    pub fn finish(&mut self) -> Option<TranscriptSegment> {
        if self.pending.is_empty() {
            return None;
        }
        let last = self.last_speech_ms.unwrap_or(self.pending_start_ms);
        Some(self.take_segment(last))
    }

    fn take_segment(&mut self, t_end_ms: u64) -> TranscriptSegment {
        let text = std::mem::take(&mut self.pending);
        let segment = TranscriptSegment {
            session_id: self.session_id.clone(),
            seq: self.next_seq,
            text: text.trim_end().to_string(),
            t_start_ms: self.pending_start_ms,
            t_end_ms: t_end_ms.max(self.pending_start_ms),
        };
        self.next_seq += 1;
        segment
    }
}

/// One line of a replay file: `{"t_ms": <int>, "text": <string>}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub t_ms: u64,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read replay file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp goes backwards")]
    NonMonotonicTimestamp { line: usize },
    #[error("replay file has no records")]
    EmptyFile,
}

/// Reads a replay file. Blank lines are ignored; line numbers are 1-based.
pub fn load_replay(path: impl AsRef<Path>) -> Result<Vec<ReplayRecord>, ReplayError> {
    let file = File::open(path)?;
    read_replay(BufReader::new(file))
}

pub fn read_replay<R: BufRead>(reader: R) -> Result<Vec<ReplayRecord>, ReplayError> {
    let mut records: Vec<ReplayRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| ReplayError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if records.last().is_some_and(|prev| record.t_ms < prev.t_ms) {
            return Err(ReplayError::NonMonotonicTimestamp { line: lineno });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(ReplayError::EmptyFile);
    }
    Ok(records)
}

/// Turns replay records into the chunk stream of one session.
pub fn replay_chunks(records: &[ReplayRecord], session_id: &str) -> Vec<CaptionChunk> {
    records
        .iter()
        .map(|r| CaptionChunk::new(session_id, r.text.clone(), r.t_ms))
        .collect()
}

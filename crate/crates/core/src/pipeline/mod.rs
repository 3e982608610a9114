//! Per-session identify → dedupe → personalize orchestration.
//!
//! A [`SessionState`] owns the glossary of one meeting. Each transcript
//! segment goes through the identification prompt; candidates already defined
//! in this session are dropped; in personalized mode the survivors go through
//! the filtering prompt and only the refined glossary is kept. Segments must
//! arrive in `seq` order and a failed model call leaves the glossary as it was.

mod highlight;

use std::collections::HashSet;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use highlight::{highlight_terms, TermMatch};

use crate::gateway::{render_preferences, Gateway, TermList, TermPair};
use crate::ingest::TranscriptSegment;

/// Case-folded, whitespace-collapsed, trimmed form of a term. No stemming.
pub fn normalize_term(term: &str) -> String {
    caseless::default_case_fold_str(term)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    General,
    Personalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Like,
    Dislike,
}

/// Listener background plus liked/disliked term keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    #[serde(default)]
    pub background_text: String,
    #[serde(default)]
    pub liked_terms: IndexSet<String>,
    #[serde(default)]
    pub disliked_terms: IndexSet<String>,
}

impl UserProfile {
    pub fn with_background(background: impl Into<String>) -> Self {
        Self {
            background_text: background.into(),
            ..Self::default()
        }
    }

    /// Personalized iff the background has non-whitespace content.
    pub fn mode(&self) -> Mode {
        if self.background_text.trim().is_empty() {
            Mode::General
        } else {
            Mode::Personalized
        }
    }

    /// Normalizes preference keys and makes the sets disjoint (dislike wins).
    pub fn normalized(self) -> Self {
        let disliked: IndexSet<String> = self
            .disliked_terms
            .iter()
            .map(|t| normalize_term(t))
            .collect();
        let liked = self
            .liked_terms
            .iter()
            .map(|t| normalize_term(t))
            .filter(|k| !disliked.contains(k))
            .collect();
        Self {
            background_text: self.background_text.trim().to_string(),
            liked_terms: liked,
            disliked_terms: disliked,
        }
    }

    pub fn record(&mut self, key: &str, verdict: Verdict) {
        let (add, remove) = match verdict {
            Verdict::Like => (&mut self.liked_terms, &mut self.disliked_terms),
            Verdict::Dislike => (&mut self.disliked_terms, &mut self.liked_terms),
        };
        remove.shift_remove(key);
        add.insert(key.to_string());
    }

    pub fn verdict(&self, key: &str) -> Option<Verdict> {
        if self.liked_terms.contains(key) {
            Some(Verdict::Like)
        } else if self.disliked_terms.contains(key) {
            Some(Verdict::Dislike)
        } else {
            None
        }
    }

    /// The `{preferences}` text of the identification prompt.
    pub fn preference_summary(&self) -> String {
        let liked: Vec<&str> = self.liked_terms.iter().map(String::as_str).collect();
        let disliked: Vec<&str> = self.disliked_terms.iter().map(String::as_str).collect();
        render_preferences(&liked, &disliked)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermEntry {
    pub term: String,
    pub key: String,
    pub definition: String,
    pub origin_seq: u64,
    pub identified_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub key: String,
    pub verdict: Verdict,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightSpan {
    pub seq: u64,
    pub start: usize,
    pub end: usize,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub code: String,
    pub message: String,
}

/// What one segment changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineDelta {
    pub new_entries: Vec<TermEntry>,
    pub highlights: Vec<HighlightSpan>,
    pub understood_dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<Diagnostic>,
}

/// One row of the glossary export document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryRecord {
    pub term: String,
    pub definition: String,
    pub origin_seq: u64,
    pub identified_at_ms: u64,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("expected segment {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("segment belongs to session {got:?}, not {expected:?}")]
    SessionMismatch { expected: String, got: String },
    #[error("no glossary entry for {0:?}")]
    UnknownTerm(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    profile: UserProfile,
    glossary: Vec<TermEntry>,
    defined_keys: IndexSet<String>,
    feedback_log: Vec<FeedbackEvent>,
    diagnostics: Vec<Diagnostic>,
    next_seq_expected: u64,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, profile: UserProfile) -> Self {
        Self {
            session_id: session_id.into(),
            profile: profile.normalized(),
            glossary: Vec::new(),
            defined_keys: IndexSet::new(),
            feedback_log: Vec::new(),
            diagnostics: Vec::new(),
            next_seq_expected: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.profile.mode()
    }

    pub fn profile(&self) -> &UserProfile {
        &self.profile
    }

    /// Replaces the profile. Preference keys not in the glossary are kept;
    /// they only steer future identification.
    pub fn set_profile(&mut self, profile: UserProfile) {
        self.profile = profile.normalized();
    }

    pub fn glossary(&self) -> &[TermEntry] {
        &self.glossary
    }

    pub fn is_defined(&self, key: &str) -> bool {
        self.defined_keys.contains(key)
    }

    pub fn entry(&self, key: &str) -> Option<&TermEntry> {
        self.glossary.iter().find(|e| e.key == key)
    }

    pub fn feedback_log(&self) -> &[FeedbackEvent] {
        &self.feedback_log
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn next_seq_expected(&self) -> u64 {
        self.next_seq_expected
    }

    fn skip(&mut self, seq: u64, reason: impl std::fmt::Display) -> PipelineDelta {
        let diagnostic = Diagnostic {
            seq: Some(seq),
            code: "segment_skipped".into(),
            message: reason.to_string(),
        };
        tracing::warn!(session = %self.session_id, seq, %diagnostic.message, "segment skipped");
        self.diagnostics.push(diagnostic.clone());
        self.next_seq_expected += 1;
        PipelineDelta {
            diagnostic: Some(diagnostic),
            ..PipelineDelta::default()
        }
    }

    /// Runs one segment through identification (and filtering in personalized
    /// mode) and appends the surviving terms to the glossary.
    ///
    /// `now_ms` stamps new entries; it is clamped so the glossary stays ordered
    /// by identification time.
    pub async fn process_segment(
        &mut self,
        segment: &TranscriptSegment,
        gateway: &Gateway,
        now_ms: u64,
    ) -> Result<PipelineDelta, PipelineError> {
        if segment.session_id != self.session_id {
            return Err(PipelineError::SessionMismatch {
                expected: self.session_id.clone(),
                got: segment.session_id.clone(),
            });
        }
        if segment.seq != self.next_seq_expected {
            return Err(PipelineError::SequenceGap {
                expected: self.next_seq_expected,
                got: segment.seq,
            });
        }

        let defined: Vec<&str> = self.glossary.iter().map(|e| e.term.as_str()).collect();
        let identified = match gateway
            .identify(&segment.text, &defined, &self.profile.preference_summary())
            .await
        {
            Ok(list) => list,
            Err(err) => return Ok(self.skip(segment.seq, format!("identify failed: {err}"))),
        };

        let mut seen = HashSet::new();
        let candidates: Vec<TermPair> = identified
            .0
            .into_iter()
            .filter(|p| !p.definition.trim().is_empty())
            .filter(|p| {
                let key = normalize_term(&p.term);
                !key.is_empty() && !self.defined_keys.contains(&key) && seen.insert(key)
            })
            .collect();

        let mut understood_dropped = Vec::new();
        let kept = if self.mode() == Mode::Personalized && !candidates.is_empty() {
            let glossary = TermList(candidates);
            match gateway
                .filter(&self.profile.background_text, &glossary)
                .await
            {
                Ok(result) => {
                    understood_dropped = result.understood_terms;
                    result.refined_glossary.0
                }
                Err(err) => return Ok(self.skip(segment.seq, format!("filter failed: {err}"))),
            }
        } else {
            candidates
        };

        let stamp = self
            .glossary
            .last()
            .map_or(now_ms, |last| now_ms.max(last.identified_at_ms));
        let new_entries: Vec<TermEntry> = kept
            .into_iter()
            .map(|p| TermEntry {
                key: normalize_term(&p.term),
                term: p.term,
                definition: p.definition,
                origin_seq: segment.seq,
                identified_at_ms: stamp,
            })
            .collect();
        for entry in &new_entries {
            self.defined_keys.insert(entry.key.clone());
            self.glossary.push(entry.clone());
        }
        self.next_seq_expected += 1;

        let highlights =
            highlight_terms(&segment.text, self.glossary.iter().map(|e| e.key.as_str()))
                .into_iter()
                .map(|m| HighlightSpan {
                    seq: segment.seq,
                    start: m.start,
                    end: m.end,
                    key: m.key,
                })
                .collect();

        Ok(PipelineDelta {
            new_entries,
            highlights,
            understood_dropped,
            diagnostic: None,
        })
    }

    /// Records a like/dislike for a glossary term; the last verdict wins.
    pub fn apply_feedback(&mut self, event: FeedbackEvent) -> Result<(), PipelineError> {
        let key = normalize_term(&event.key);
        if !self.defined_keys.contains(&key) {
            return Err(PipelineError::UnknownTerm(event.key));
        }
        self.profile.record(&key, event.verdict);
        self.feedback_log.push(FeedbackEvent { key, ..event });
        Ok(())
    }

    pub fn export_glossary(&self) -> Vec<GlossaryRecord> {
        self.glossary
            .iter()
            .map(|e| GlossaryRecord {
                term: e.term.clone(),
                definition: e.definition.clone(),
                origin_seq: e.origin_seq,
                identified_at_ms: e.identified_at_ms,
                verdict: self.profile.verdict(&e.key),
            })
            .collect()
    }

    /// The glossary export document as pretty-printed JSON.
    pub fn export_glossary_json(&self) -> String {
        glossary_json(&self.export_glossary())
    }
}

pub fn glossary_json(records: &[GlossaryRecord]) -> String {
    serde_json::to_string_pretty(records).expect("glossary serializes")
}

//! Offline evaluation: transcript replay, general-vs-personalized diffs, and
//! helpful-rate arithmetic over rating sheets.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CallStats, Gateway};
use crate::ingest::{
    load_replay, replay_chunks, IngestError, ReplayError, ReplayRecord, SegmentationBuffer,
    TranscriptSegment,
};
use crate::pipeline::{
    normalize_term, Diagnostic, GlossaryRecord, Mode, PipelineError, SessionState, UserProfile,
};
use crate::scheduler::{DisplayChange, DisplayState, DEFAULT_MIN_DISPLAY_MS, DEFAULT_TICK_MS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("personalized replay needs a profile with a non-empty background")]
    MissingProfile,
    #[error("reports are for different transcripts: {general:?} vs {personalized:?}")]
    LabelMismatch {
        general: String,
        personalized: String,
    },
    #[error("expected a {expected:?} report, got {got:?}")]
    ModeMismatch { expected: Mode, got: Mode },
    #[error("no rating sheets given")]
    NoSheets,
    #[error("rating sheet {0:?} has no ratings")]
    EmptySheet(String),
    #[error("sheet {session:?} rates {key:?}, which is not in its glossary")]
    UnknownRatedTerm { session: String, key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTerm {
    pub seq: u64,
    pub term: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCalls {
    pub identify: u64,
    pub filter: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_call_ms: f64,
    pub max_call_ms: u64,
}

/// Outcome of replaying one transcript in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub label: String,
    pub mode: Mode,
    pub term_count: usize,
    pub glossary: Vec<GlossaryRecord>,
    pub segments: usize,
    pub understood_dropped: Vec<DroppedTerm>,
    pub skipped_segments: Vec<Diagnostic>,
    pub provider_calls: ProviderCalls,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    pub display_timeline: Vec<DisplayChange>,
}

impl SessionReport {
    pub fn keys(&self) -> HashSet<String> {
        self.glossary
            .iter()
            .map(|r| normalize_term(&r.term))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub mode: Mode,
    pub profile: Option<UserProfile>,
    /// Sleep between records according to their timestamps.
    pub realtime: bool,
    /// Include mean/max provider latency (not deterministic).
    pub record_latency: bool,
    pub min_display_ms: u64,
    pub tick_ms: u64,
}

impl ReplayOptions {
    pub fn general() -> Self {
        Self {
            mode: Mode::General,
            profile: None,
            realtime: false,
            record_latency: false,
            min_display_ms: DEFAULT_MIN_DISPLAY_MS,
            tick_ms: DEFAULT_TICK_MS,
        }
    }

    pub fn personalized(profile: UserProfile) -> Self {
        Self {
            mode: Mode::Personalized,
            profile: Some(profile),
            ..Self::general()
        }
    }
}

/// The label a replay file is reported under: its file stem.
pub fn transcript_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub async fn run_replay_file(
    transcript: &Path,
    gateway: &Gateway,
    options: &ReplayOptions,
) -> Result<SessionReport, EvalError> {
    let records = load_replay(transcript)?;
    run_replay(&transcript_label(transcript), &records, gateway, options).await
}

struct Replayer<'a> {
    gateway: &'a Gateway,
    state: SessionState,
    display: DisplayState,
    timeline: Vec<DisplayChange>,
    dropped: Vec<DroppedTerm>,
    segments: usize,
    clock_ms: u64,
    tick_ms: u64,
}

impl Replayer<'_> {
    /// Simulates scheduler ticks up to `until_ms` without sleeping.
    fn advance(&mut self, until_ms: u64) {
        while self.clock_ms + self.tick_ms <= until_ms {
            self.clock_ms += self.tick_ms;
            self.timeline.extend(self.display.tick(self.clock_ms));
        }
        self.clock_ms = self.clock_ms.max(until_ms);
    }

    async fn process(&mut self, segment: TranscriptSegment) -> Result<(), EvalError> {
        self.segments += 1;
        self.advance(segment.t_end_ms);
        let delta = self
            .state
            .process_segment(&segment, self.gateway, segment.t_end_ms)
            .await?;
        self.dropped.extend(
            delta
                .understood_dropped
                .into_iter()
                .map(|term| DroppedTerm {
                    seq: segment.seq,
                    term,
                }),
        );
        for entry in delta.new_entries {
            let change = self
                .display
                .push_term(entry.key, self.clock_ms)
                .expect("glossary keys are unique");
            self.timeline.extend(change);
        }
        Ok(())
    }

    fn drain_display(&mut self) {
        while self.display.queue_depth() > 0 {
            let next = self.clock_ms + self.tick_ms;
            self.advance(next);
        }
    }
}

/// Replays transcript records through ingestion and the pipeline.
///
/// Timestamps drive the simulated scheduler clock; the replay only sleeps on
/// them when `options.realtime` is set.
pub async fn run_replay(
    label: &str,
    records: &[ReplayRecord],
    gateway: &Gateway,
    options: &ReplayOptions,
) -> Result<SessionReport, EvalError> {
    let profile = match options.mode {
        Mode::General => UserProfile::default(),
        Mode::Personalized => {
            let profile = options.profile.clone().ok_or(EvalError::MissingProfile)?;
            if profile.mode() != Mode::Personalized {
                return Err(EvalError::MissingProfile);
            }
            profile
        }
    };
    let before = gateway.stats();
    let session_id = format!("replay:{label}");
    let mut buffer = SegmentationBuffer::new(&session_id);
    let mut replayer = Replayer {
        gateway,
        state: SessionState::new(&session_id, profile),
        display: DisplayState::new(options.min_display_ms),
        timeline: Vec::new(),
        dropped: Vec::new(),
        segments: 0,
        clock_ms: 0,
        tick_ms: options.tick_ms.max(1),
    };

    let mut last_t = None;
    for chunk in replay_chunks(records, &session_id) {
        if options.realtime {
            if let Some(prev) = last_t {
                tokio::time::sleep(Duration::from_millis(chunk.t_ms - prev)).await;
            }
        }
        last_t = Some(chunk.t_ms);
        if let Some(segment) = buffer.flush(chunk.t_ms) {
            replayer.process(segment).await?;
        }
        for segment in buffer.ingest(&chunk)? {
            replayer.process(segment).await?;
        }
    }
    if let Some(segment) = buffer.finish() {
        replayer.process(segment).await?;
    }
    replayer.drain_display();

    let after = gateway.stats();
    let calls = diff_stats(&before, &after);
    let latency = options.record_latency.then(|| {
        let n = calls.identify + calls.filter;
        LatencyStats {
            mean_call_ms: if n == 0 {
                0.0
            } else {
                (after.total_latency_ms - before.total_latency_ms) as f64 / n as f64
            },
            max_call_ms: after.max_latency_ms,
        }
    });

    let glossary = replayer.state.export_glossary();
    Ok(SessionReport {
        label: label.to_string(),
        mode: options.mode,
        term_count: glossary.len(),
        glossary,
        segments: replayer.segments,
        understood_dropped: replayer.dropped,
        skipped_segments: replayer.state.diagnostics().to_vec(),
        provider_calls: calls,
        latency,
        display_timeline: replayer.timeline,
    })
}

fn diff_stats(before: &CallStats, after: &CallStats) -> ProviderCalls {
    ProviderCalls {
        identify: after.identify_calls - before.identify_calls,
        filter: after.filter_calls - before.filter_calls,
        failures: after.failures - before.failures,
    }
}

/// Term-set comparison of a general and a personalized replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub label: String,
    pub general_count: usize,
    pub personalized_count: usize,
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    /// Personalized terms missing from the general glossary. Filtering only
    /// removes terms, so anything here is an anomaly.
    pub anomalies: Vec<String>,
}

pub fn compare_modes(
    general: &SessionReport,
    personalized: &SessionReport,
) -> Result<DiffReport, EvalError> {
    if general.label != personalized.label {
        return Err(EvalError::LabelMismatch {
            general: general.label.clone(),
            personalized: personalized.label.clone(),
        });
    }
    if general.mode != Mode::General {
        return Err(EvalError::ModeMismatch {
            expected: Mode::General,
            got: general.mode,
        });
    }
    if personalized.mode != Mode::Personalized {
        return Err(EvalError::ModeMismatch {
            expected: Mode::Personalized,
            got: personalized.mode,
        });
    }
    let general_keys = general.keys();
    let personal_keys = personalized.keys();
    let split = |records: &[GlossaryRecord], other: &HashSet<String>, inside: bool| {
        records
            .iter()
            .filter(|r| other.contains(&normalize_term(&r.term)) == inside)
            .map(|r| r.term.clone())
            .collect::<Vec<_>>()
    };
    Ok(DiffReport {
        label: general.label.clone(),
        general_count: general.term_count,
        personalized_count: personalized.term_count,
        kept: split(&general.glossary, &personal_keys, true),
        removed: split(&general.glossary, &personal_keys, false),
        anomalies: split(&personalized.glossary, &general_keys, false),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Helpful,
    NotHelpful,
}

/// One listener's ratings of one session's glossary, keyed by term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub session: String,
    pub ratings: IndexMap<String, Rating>,
}

impl RatingSheet {
    pub fn helpful(&self) -> usize {
        self.ratings
            .values()
            .filter(|r| **r == Rating::Helpful)
            .count()
    }

    pub fn total(&self) -> usize {
        self.ratings.len()
    }

    /// Checks that every rated term is in `report`'s glossary.
    pub fn validate_against(&self, report: &SessionReport) -> Result<(), EvalError> {
        let keys = report.keys();
        match self
            .ratings
            .keys()
            .find(|k| !keys.contains(&normalize_term(k)))
        {
            Some(key) => Err(EvalError::UnknownRatedTerm {
                session: self.session.clone(),
                key: key.clone(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRate {
    pub session: String,
    pub helpful: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpfulRateSummary {
    pub sessions: Vec<SessionRate>,
    pub per_session_rates: Vec<f64>,
    /// Unweighted mean of per-session rates.
    pub macro_rate: f64,
    /// Pooled helpful count over pooled total.
    pub micro_rate: f64,
    pub note: String,
}

/// Averaged counts and averaged rate of a published comparison whose rate
/// column is a mean of per-session ratios: (helpful, total, rate).
pub const REFERENCE_AVERAGES: [(&str, f64, f64, f64); 2] = [
    ("general", 10.29, 22.57, 0.4703),
    ("personalized", 7.64, 9.71, 0.7751),
];

/// Explains why macro and micro rates are both reported.
pub fn averaging_note() -> String {
    let rows: Vec<String> = REFERENCE_AVERAGES
        .iter()
        .map(|(name, helpful, total, rate)| {
            format!(
                "{name}: mean counts {helpful:.2}/{total:.2} give a pooled rate of {:.3}, \
                 while the mean per-session rate is {:.2}%",
                helpful / total,
                rate * 100.0
            )
        })
        .collect();
    format!(
        "macro_rate is the mean of per-session helpful rates; micro_rate pools all ratings. \
         They differ whenever glossary sizes differ between sessions. Reference check: {}.",
        rows.join("; ")
    )
}

pub fn compute_helpful_rate(sheets: &[RatingSheet]) -> Result<HelpfulRateSummary, EvalError> {
    if sheets.is_empty() {
        return Err(EvalError::NoSheets);
    }
    let mut sessions = Vec::with_capacity(sheets.len());
    for sheet in sheets {
        if sheet.total() == 0 {
            return Err(EvalError::EmptySheet(sheet.session.clone()));
        }
        sessions.push(SessionRate {
            session: sheet.session.clone(),
            helpful: sheet.helpful(),
            total: sheet.total(),
            rate: sheet.helpful() as f64 / sheet.total() as f64,
        });
    }
    let per_session_rates: Vec<f64> = sessions.iter().map(|s| s.rate).collect();
    let macro_rate = per_session_rates.iter().sum::<f64>() / per_session_rates.len() as f64;
    let helpful: usize = sessions.iter().map(|s| s.helpful).sum();
    let total: usize = sessions.iter().map(|s| s.total).sum();
    Ok(HelpfulRateSummary {
        sessions,
        per_session_rates,
        macro_rate,
        micro_rate: helpful as f64 / total as f64,
        note: averaging_note(),
    })
}

/// Groups glossary terms by the segment that introduced them.
pub fn terms_by_segment(report: &SessionReport) -> BTreeMap<u64, Vec<String>> {
    let mut map: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for record in &report.glossary {
        map.entry(record.origin_seq)
            .or_default()
            .push(record.term.clone());
    }
    map
}

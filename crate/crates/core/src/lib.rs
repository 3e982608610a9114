//! Real-time jargon support for meeting captions.
//!
//! The crate is organized along the path a caption takes through the system:
//!
//! - [`ingest`]: caption chunks and replay files become ordered, sentence-sized
//!   [`ingest::TranscriptSegment`]s.
//! - [`gateway`]: prompt rendering, completion providers (live and mock) and
//!   tolerant parsing of model output.
//! - [`pipeline`]: per-session identify, dedupe and personalize, plus feedback
//!   and caption highlighting.
//! - [`scheduler`]: the single "latest term" slot with its minimum dwell time.
//! - [`eval`]: transcript replay, general-vs-personalized diffing and
//!   helpful-rate arithmetic.

pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod pipeline;
pub mod scheduler;

pub use gateway::{CompletionParams, Gateway, TermList};
pub use ingest::{CaptionChunk, SegmentationBuffer, TranscriptSegment};
pub use pipeline::{SessionState, UserProfile};
pub use scheduler::DisplayState;

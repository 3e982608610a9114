//! Prompt rendering, completion providers, and parsing of model output.

mod mock;
mod openai;
mod parse;
mod prompt;
mod provider;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{fixture_key, FixtureEntry, FixtureError, MockProvider, RecordingProvider};
pub use openai::{request_body, response_text, OpenAiProvider, ProviderConfig, DEFAULT_BASE_URL};
pub use parse::{parse_filter_result, parse_term_list, strip_code_fences, ParseError};
pub use prompt::{
    render_filter_prompt, render_identify_prompt, render_preferences, ChatMessages, PromptError,
    PromptTemplate,
};
pub use provider::{
    complete_with_retry, CompletionProvider, ProviderError, ProviderErrorKind, RetryPolicy,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: u32 = 1000;
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_name: DEFAULT_MODEL.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("max_tokens must be at least 1")]
    MaxTokens,
}

impl CompletionParams {
    pub fn with_model(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ParamsError::Temperature(self.temperature));
        }
        if self.max_tokens == 0 {
            return Err(ParamsError::MaxTokens);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermPair {
    pub term: String,
    pub definition: String,
}

/// Ordered term-definition pairs, as exchanged with the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermList(pub Vec<TermPair>);

impl TermList {
    pub fn from_pairs<T, D>(pairs: impl IntoIterator<Item = (T, D)>) -> Self
    where
        T: Into<String>,
        D: Into<String>,
    {
        Self(
            pairs
                .into_iter()
                .map(|(t, d)| TermPair {
                    term: t.into(),
                    definition: d.into(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TermPair> {
        self.0.iter()
    }

    /// `[{"term": "definition"}, ...]`, the shape both prompts use.
    pub fn to_prompt_json(&self) -> String {
        let items: Vec<String> = self
            .0
            .iter()
            .map(|p| {
                format!(
                    "{{{}: {}}}",
                    serde_json::to_string(&p.term).expect("string serializes"),
                    serde_json::to_string(&p.definition).expect("string serializes")
                )
            })
            .collect();
        format!("[{}]", items.join(", "))
    }
}

impl<'a> IntoIterator for &'a TermList {
    type Item = &'a TermPair;
    type IntoIter = std::slice::Iter<'a, TermPair>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Candidate terms split into those the listener already knows and those to show.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterResult {
    pub understood_terms: Vec<String>,
    pub refined_glossary: TermList,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Call counters and latency totals since the gateway was created.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub identify_calls: u64,
    pub filter_calls: u64,
    pub failures: u64,
    pub total_latency_ms: u64,
    pub max_latency_ms: u64,
}

#[derive(Debug, Default)]
struct Counters {
    identify: AtomicU64,
    filter: AtomicU64,
    failures: AtomicU64,
    total_ms: AtomicU64,
    max_ms: AtomicU64,
}

/// The two model calls the pipeline makes, over a shared provider.
pub struct Gateway {
    provider: Arc<dyn CompletionProvider>,
    params: CompletionParams,
    retry: RetryPolicy,
    counters: Counters,
}

impl Gateway {
    pub fn new(provider: Arc<dyn CompletionProvider>) -> Self {
        Self {
            provider,
            params: CompletionParams::default(),
            retry: RetryPolicy::default(),
            counters: Counters::default(),
        }
    }

    pub fn with_params(mut self, params: CompletionParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn params(&self) -> &CompletionParams {
        &self.params
    }

    pub fn stats(&self) -> CallStats {
        let c = &self.counters;
        CallStats {
            identify_calls: c.identify.load(Ordering::Relaxed),
            filter_calls: c.filter.load(Ordering::Relaxed),
            failures: c.failures.load(Ordering::Relaxed),
            total_latency_ms: c.total_ms.load(Ordering::Relaxed),
            max_latency_ms: c.max_ms.load(Ordering::Relaxed),
        }
    }

    async fn call(&self, messages: &ChatMessages) -> Result<String, ProviderError> {
        let started = Instant::now();
        let result =
            complete_with_retry(self.provider.as_ref(), messages, &self.params, &self.retry).await;
        let ms = u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX);
        self.counters.total_ms.fetch_add(ms, Ordering::Relaxed);
        self.counters.max_ms.fetch_max(ms, Ordering::Relaxed);
        if result.is_err() {
            self.counters.failures.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    /// Identifies and defines jargon in one transcript sentence.
    pub async fn identify<S: AsRef<str>>(
        &self,
        transcript: &str,
        defined_terms: &[S],
        preferences: &str,
    ) -> Result<TermList, GatewayError> {
        let messages = render_identify_prompt(transcript, defined_terms, preferences)?;
        self.counters.identify.fetch_add(1, Ordering::Relaxed);
        let raw = self.call(&messages).await?;
        Ok(parse_term_list(&raw)?)
    }

    /// Splits `glossary` into terms the listener likely knows and terms to show.
    pub async fn filter(
        &self,
        background: &str,
        glossary: &TermList,
    ) -> Result<FilterResult, GatewayError> {
        let messages = render_filter_prompt(background, glossary)?;
        self.counters.filter.fetch_add(1, Ordering::Relaxed);
        let raw = self.call(&messages).await?;
        Ok(parse_filter_result(&raw, glossary)?)
    }
}

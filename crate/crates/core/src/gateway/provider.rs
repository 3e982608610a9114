use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatMessages, CompletionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    Timeout,
    RateLimited,
    Transport,
    MalformedResponse,
}

impl ProviderErrorKind {
    pub fn is_retryable(self) -> bool {
        !matches!(self, ProviderErrorKind::MalformedResponse)
    }
}

impl fmt::Display for ProviderErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderErrorKind::Timeout => "timeout",
            ProviderErrorKind::RateLimited => "rate_limited",
            ProviderErrorKind::Transport => "transport",
            ProviderErrorKind::MalformedResponse => "malformed_response",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}: {detail}")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub detail: String,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        self.kind.is_retryable()
    }
}

/// A chat-completion backend.
#[async_trait]
pub trait CompletionProvider: Send + Sync {
    async fn complete(
        &self,
        messages: &ChatMessages,
        params: &CompletionParams,
    ) -> Result<String, ProviderError>;
}

/// Retry schedule for provider calls: `retry_max` retries after the first
/// attempt, sleeping `base_delay * 2^attempt` in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retry_max: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retry_max: 2,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(15),
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self {
            retry_max: 0,
            ..Self::default()
        }
    }

    pub fn delay_for(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

/// Calls `provider`, enforcing the per-call timeout and retrying retryable
/// failures. Malformed responses are surfaced immediately.
pub async fn complete_with_retry(
    provider: &dyn CompletionProvider,
    messages: &ChatMessages,
    params: &CompletionParams,
    policy: &RetryPolicy,
) -> Result<String, ProviderError> {
    let mut attempt = 0;
    loop {
        let result =
            match tokio::time::timeout(policy.timeout, provider.complete(messages, params)).await {
                Ok(result) => result,
                Err(_) => Err(ProviderError::new(
                    ProviderErrorKind::Timeout,
                    format!("no response within {:?}", policy.timeout),
                )),
            };
        match result {
            Ok(text) => return Ok(text),
            Err(err) if err.is_retryable() && attempt < policy.retry_max => {
                let delay = policy.delay_for(attempt);
                tracing::debug!(%err, attempt, ?delay, "retrying completion");
                tokio::time::sleep(delay).await;
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

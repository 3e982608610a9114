//! Live provider for OpenAI-compatible `/chat/completions` endpoints.

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{ChatMessages, CompletionParams, CompletionProvider, ProviderError, ProviderErrorKind};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

pub const ENV_API_KEY: &str = "JARGON_API_KEY";
pub const ENV_BASE_URL: &str = "JARGON_BASE_URL";
pub const ENV_MODEL: &str = "JARGON_MODEL";

/// Connection settings for a live provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderConfig {
    pub api_key: String,
    pub base_url: String,
    pub model_name: Option<String>,
}

impl ProviderConfig {
    /// Reads `JARGON_API_KEY` (falling back to `OPENAI_API_KEY`),
    /// `JARGON_BASE_URL` and `JARGON_MODEL`. Returns `None` without a key.
    pub fn from_env() -> Option<Self> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let api_key = var(ENV_API_KEY).or_else(|| var("OPENAI_API_KEY"))?;
        Some(Self {
            api_key,
            base_url: var(ENV_BASE_URL).unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            model_name: var(ENV_MODEL),
        })
    }
}

pub struct OpenAiProvider {
    client: reqwest::Client,
    config: ProviderConfig,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Self {
        Self {
            client: reqwest::Client::new(),
            config,
        }
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }
}

/// JSON body of a chat completion request.
pub fn request_body(messages: &ChatMessages, params: &CompletionParams) -> Value {
    json!({
        "model": params.model_name,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "messages": [
            {"role": "system", "content": messages.system},
            {"role": "user", "content": messages.user},
        ],
    })
}

/// Pulls the first choice's message content out of a response body.
pub fn response_text(body: &Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            ProviderError::new(
                ProviderErrorKind::MalformedResponse,
                "response has no choices[0].message.content",
            )
        })
}

fn classify_status(status: reqwest::StatusCode) -> ProviderErrorKind {
    match status.as_u16() {
        429 => ProviderErrorKind::RateLimited,
        408 | 504 => ProviderErrorKind::Timeout,
        _ => ProviderErrorKind::Transport,
    }
}

#[async_trait]
impl CompletionProvider for OpenAiProvider {
    async fn complete(
        &self,
        messages: &ChatMessages,
        params: &CompletionParams,
    ) -> Result<String, ProviderError> {
        let transport = |e: reqwest::Error| {
            let kind = if e.is_timeout() {
                ProviderErrorKind::Timeout
            } else {
                ProviderErrorKind::Transport
            };
            ProviderError::new(kind, e.to_string())
        };
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(&request_body(messages, params))
            .send()
            .await
            .map_err(transport)?;
        let status = response.status();
        if !status.is_success() {
            let detail = response.text().await.unwrap_or_default();
            return Err(ProviderError::new(
                classify_status(status),
                format!("HTTP {status}: {detail}"),
            ));
        }
        let body: Value = response
            .json()
            .await
            .map_err(|e| ProviderError::new(ProviderErrorKind::MalformedResponse, e.to_string()))?;
        response_text(&body)
    }
}

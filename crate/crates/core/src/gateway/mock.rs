//! Deterministic fixture-backed provider, and a recorder that produces fixtures.
//!
//! Fixtures are JSON files holding an array of entries. Each entry names the
//! request it answers either by `key` (see [`fixture_key`]) or by the full
//! `system` and `user` messages, which are hashed on load:
//!
//! ```json
//! [{"note": "sentence 1", "system": "...", "user": "...", "response": "[]"}]
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChatMessages, CompletionParams, CompletionProvider, ProviderError, ProviderErrorKind};

/// Stable hex SHA-256 of the rendered messages.
pub fn fixture_key(messages: &ChatMessages) -> String {
    let canonical =
        serde_json::to_string(&[&messages.system, &messages.user]).expect("strings serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    pub response: String,
}

impl FixtureEntry {
    fn resolve_key(&self) -> Option<String> {
        match (&self.key, &self.system, &self.user) {
            (Some(key), _, _) => Some(key.clone()),
            (None, Some(system), Some(user)) => Some(fixture_key(&ChatMessages {
                system: system.clone(),
                user: user.clone(),
            })),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixtures at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid fixture file {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("fixture entry {index} in {path} has neither key nor system+user")]
    Unkeyed { path: PathBuf, index: usize },
}

#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    responses: HashMap<String, String>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, messages: &ChatMessages, response: impl Into<String>) {
        self.responses
            .insert(fixture_key(messages), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Loads a single fixture file, or every `*.json` file of a directory in
    /// file-name order. Later entries override earlier ones with the same key.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let io = |source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path).map_err(io)? {
                let file = entry.map_err(io)?.path();
                if file.extension().is_some_and(|e| e == "json") {
                    files.push(file);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }

        let mut provider = Self::new();
        for file in files {
            let text = fs::read_to_string(&file).map_err(|source| FixtureError::Io {
                path: file.clone(),
                source,
            })?;
            let entries: Vec<FixtureEntry> =
                serde_json::from_str(&text).map_err(|source| FixtureError::Json {
                    path: file.clone(),
                    source,
                })?;
            for (index, entry) in entries.into_iter().enumerate() {
                let key = entry.resolve_key().ok_or_else(|| FixtureError::Unkeyed {
                    path: file.clone(),
                    index,
                })?;
                provider.responses.insert(key, entry.response);
            }
        }
        Ok(provider)
    }
}

#[async_trait]
impl CompletionProvider for MockProvider {
    async fn complete(
        &self,
        messages: &ChatMessages,
        _params: &CompletionParams,
    ) -> Result<String, ProviderError> {
        let key = fixture_key(messages);
        self.responses.get(&key).cloned().ok_or_else(|| {
            ProviderError::new(
                ProviderErrorKind::MalformedResponse,
                format!("no fixture for key {key}"),
            )
        })
    }
}

/// Wraps another provider and keeps every successful exchange so it can be
/// written out as a fixture file.
pub struct RecordingProvider {
    inner: Arc<dyn CompletionProvider>,
    entries: Mutex<Vec<FixtureEntry>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn CompletionProvider>) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.entries.lock().expect("recorder lock").clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.entries()).map_err(std::io::Error::other)?;
        fs::write(path, json + "\n")
    }
}

#[async_trait]
impl CompletionProvider for RecordingProvider {
    async fn complete(
        &self,
        messages: &ChatMessages,
        params: &CompletionParams,
    ) -> Result<String, ProviderError> {
        let response = self.inner.complete(messages, params).await?;
        let mut entries = self.entries.lock().expect("recorder lock");
        let key = fixture_key(messages);
        if !entries
            .iter()
            .any(|e| e.resolve_key().as_deref() == Some(key.as_str()))
        {
            entries.push(FixtureEntry {
                note: None,
                key: None,
                system: Some(messages.system.clone()),
                user: Some(messages.user.clone()),
                response: response.clone(),
            });
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(user: &str) -> ChatMessages {
        ChatMessages {
            system: "sys".into(),
            user: user.into(),
        }
    }

    #[test]
    fn key_is_stable_and_separates_fields() {
        let a = fixture_key(&msgs("u"));
        assert_eq!(a, fixture_key(&msgs("u")));
        assert_eq!(a.len(), 64);
        let shifted = ChatMessages {
            system: "sysu".into(),
            user: "".into(),
        };
        assert_ne!(a, fixture_key(&shifted));
    }

    #[tokio::test]
    async fn resolves_canned_text_and_misses_cleanly() {
        let mut mock = MockProvider::new();
        mock.insert(&msgs("hello"), "[]");
        let params = CompletionParams::default();
        assert_eq!(mock.complete(&msgs("hello"), &params).await.unwrap(), "[]");
        let miss = mock.complete(&msgs("other"), &params).await.unwrap_err();
        assert_eq!(miss.kind, ProviderErrorKind::MalformedResponse);
    }

    #[tokio::test]
    async fn loads_directory_and_round_trips_recordings() {
        let dir = tempfile::tempdir().unwrap();
        let mut inner = MockProvider::new();
        inner.insert(&msgs("a"), "A");
        let recorder = RecordingProvider::new(Arc::new(inner));
        let params = CompletionParams::default();
        recorder.complete(&msgs("a"), &params).await.unwrap();
        recorder.complete(&msgs("a"), &params).await.unwrap();
        assert_eq!(recorder.entries().len(), 1);
        recorder.save(dir.path().join("rec.json")).unwrap();

        let keyed = format!(
            r#"[{{"key": "{}", "response": "B"}}]"#,
            fixture_key(&msgs("b"))
        );
        fs::write(dir.path().join("keyed.json"), keyed).unwrap();
        fs::write(dir.path().join("ignored.txt"), "not json").unwrap();

        let loaded = MockProvider::load(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.complete(&msgs("a"), &params).await.unwrap(), "A");
        assert_eq!(loaded.complete(&msgs("b"), &params).await.unwrap(), "B");
    }

    #[test]
    fn unkeyed_entry_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.json");
        fs::write(&file, r#"[{"user": "x", "response": "y"}]"#).unwrap();
        assert!(matches!(
            MockProvider::load(&file),
            Err(FixtureError::Unkeyed { index: 0, .. })
        ));
    }
}

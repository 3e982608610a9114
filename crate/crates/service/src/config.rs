use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jargon_core::ingest::DEFAULT_SILENCE_FLUSH_MS;
use jargon_core::scheduler::{DEFAULT_MIN_DISPLAY_MS, DEFAULT_TICK_MS};

/// Server settings. Provider credentials come from the environment instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Clock tick interval; 0 disables wall-clock ticks so only caption
    /// timestamps move a session's clock.
    pub tick_ms: u64,
    pub min_display_ms: u64,
    pub silence_flush_ms: u64,
    /// SQLite database file. Sessions are kept in memory when unset.
    pub database: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8787)),
            tick_ms: DEFAULT_TICK_MS,
            min_display_ms: DEFAULT_MIN_DISPLAY_MS,
            silence_flush_ms: DEFAULT_SILENCE_FLUSH_MS,
            database: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }
}

//! Server configuration: a TOML file, then `CODETRAIL_*` environment overrides.
//!
//! | variable                        | field                   |
//! |---------------------------------|-------------------------|
//! | `CODETRAIL_LISTEN`              | `listen`                |
//! | `CODETRAIL_JOURNAL_DIR`         | `journal_dir`           |
//! | `CODETRAIL_STUDENT_TOKEN`       | `student_token`         |
//! | `CODETRAIL_INSTRUCTOR_TOKEN`    | `instructor_token`      |
//! | `CODETRAIL_PROVENANCE_CONFIG`   | `provenance_config`     |
//! | `CODETRAIL_PROVIDER`            | `provider.kind`         |
//! | `CODETRAIL_PROVIDER_MODEL`      | `provider.model`        |
//! | `CODETRAIL_PROVIDER_ENDPOINT`   | `provider.endpoint`     |
//!
//! The chat-completion API key is read from the variable named by
//! `provider.api_key_env` (default `CODETRAIL_API_KEY`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use codetrail_core::provenance::{ConfigError, ProvenanceConfig};
use codetrail_core::question::{GenerationProvider, StubProvider};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::ChatCompletionProvider;

pub const ENV_PREFIX: &str = "CODETRAIL_";

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid provenance config {path}: {source}")]
    Provenance {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("invalid value for {var}: {message}")]
    Env { var: String, message: String },
    #[error("provider setup failed: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Stub,
    ChatCompletion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub model: String,
    pub endpoint: String,
    pub api_key_env: String,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            kind: ProviderKind::Stub,
            model: "gpt-3.5-turbo".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "CODETRAIL_API_KEY".into(),
        }
    }
}

impl ProviderSettings {
    pub fn build(&self) -> Result<Arc<dyn GenerationProvider>, SettingsError> {
        match self.kind {
            ProviderKind::Stub => Ok(Arc::new(StubProvider)),
            ProviderKind::ChatCompletion => {
                ChatCompletionProvider::from_env(&self.endpoint, &self.model, &self.api_key_env)
                    .map(|p| Arc::new(p) as Arc<dyn GenerationProvider>)
                    .map_err(|e| SettingsError::Provider(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub journal_dir: Option<PathBuf>,
    pub student_token: Option<String>,
    pub instructor_token: Option<String>,
    pub provenance_config: Option<PathBuf>,
    pub provider: ProviderSettings,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:7878".into(),
            journal_dir: None,
            student_token: None,
            instructor_token: None,
            provenance_config: None,
            provider: ProviderSettings::default(),
        }
    }
}

fn read(path: &Path) -> Result<String, SettingsError> {
    std::fs::read_to_string(path).map_err(|source| SettingsError::Read {
        path: path.to_path_buf(),
        source,
    })
}

impl ServerConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, SettingsError> {
        toml::from_str(&read(path)?).map_err(|e| SettingsError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Applies `CODETRAIL_*` overrides looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), SettingsError> {
        let get = |name: &str| var(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        if let Some(v) = get("LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("JOURNAL_DIR") {
            self.journal_dir = Some(v.into());
        }
        if let Some(v) = get("STUDENT_TOKEN") {
            self.student_token = Some(v);
        }
        if let Some(v) = get("INSTRUCTOR_TOKEN") {
            self.instructor_token = Some(v);
        }
        if let Some(v) = get("PROVENANCE_CONFIG") {
            self.provenance_config = Some(v.into());
        }
        if let Some(v) = get("PROVIDER") {
            self.provider.kind = serde_json::from_value(serde_json::Value::String(v.clone())).map_err(|_| {
                SettingsError::Env {
                    var: format!("{ENV_PREFIX}PROVIDER"),
                    message: format!("`{v}` is not one of stub, chat_completion"),
                }
            })?;
        }
        if let Some(v) = get("PROVIDER_MODEL") {
            self.provider.model = v;
        }
        if let Some(v) = get("PROVIDER_ENDPOINT") {
            self.provider.endpoint = v;
        }
        Ok(())
    }

    pub fn provenance(&self) -> Result<ProvenanceConfig, SettingsError> {
        match &self.provenance_config {
            Some(p) => load_provenance(p),
            None => Ok(ProvenanceConfig::default()),
        }
    }
}

/// Reads a provenance config; `.json` files are JSON, anything else TOML.
pub fn load_provenance(path: &Path) -> Result<ProvenanceConfig, SettingsError> {
    let text = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        ProvenanceConfig::from_json_str(&text)
    } else {
        ProvenanceConfig::from_toml_str(&text)
    };
    parsed.map_err(|source| SettingsError::Provenance {
        path: path.to_path_buf(),
        source,
    })
}

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Gateway, GatewayError, RetryPolicy, RuleSet, ScriptedBackend};

pub const ENV_BACKEND: &str = "POLYLEARN_BACKEND";
pub const ENV_ENDPOINT: &str = "POLYLEARN_ENDPOINT";
pub const ENV_MODEL: &str = "POLYLEARN_MODEL";
pub const ENV_API_KEY: &str = "POLYLEARN_API_KEY";
pub const ENV_RULES: &str = "POLYLEARN_MOCK_RULES";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            api_key_env: ENV_API_KEY.into(),
            timeout_secs: 120,
        }
    }
}

/// Backend selection. Loaded from TOML; environment variables override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub model: String,
    pub max_output_tokens: u32,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Extra mock rules, consulted before the bundled ones.
    pub mock_rules: Option<PathBuf>,
    pub http: HttpSettings,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model: "default".into(),
            max_output_tokens: 4096,
            max_attempts: 4,
            backoff_ms: 500,
            max_backoff_ms: 8000,
            mock_rules: None,
            http: HttpSettings::default(),
        }
    }
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies overrides from a variable lookup (normally `std::env::var`).
    pub fn with_env(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Self, GatewayError> {
        if let Some(b) = var(ENV_BACKEND) {
            self.backend = b.parse().map_err(GatewayError::Config)?;
        }
        if let Some(e) = var(ENV_ENDPOINT) {
            self.http.endpoint = e;
        }
        if let Some(m) = var(ENV_MODEL) {
            self.model = m;
        }
        if let Some(r) = var(ENV_RULES) {
            self.mock_rules = Some(r.into());
        }
        Ok(self)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts.max(1),
            base_delay: Duration::from_millis(self.backoff_ms),
            max_delay: Duration::from_millis(self.max_backoff_ms),
        }
    }

    pub fn build(&self) -> Result<Gateway, GatewayError> {
        let gateway = match self.backend {
            BackendKind::Mock => {
                let mut rules = match &self.mock_rules {
                    Some(p) => RuleSet::load(p).map_err(GatewayError::Config)?,
                    None => RuleSet::default(),
                };
                rules.extend(RuleSet::bundled());
                Gateway::new(Arc::new(ScriptedBackend::new(rules)))
            }
            #[cfg(feature = "http")]
            BackendKind::Http => {
                let key = std::env::var(&self.http.api_key_env).ok();
                Gateway::new(Arc::new(super::HttpBackend::new(
                    self.http.endpoint.clone(),
                    key,
                    Duration::from_secs(self.http.timeout_secs),
                )))
            }
            #[cfg(not(feature = "http"))]
            BackendKind::Http => return Err(GatewayError::Config("built without the `http` feature".into())),
        };
        Ok(gateway.with_retry(self.retry_policy()).with_model(self.model.clone(), self.max_output_tokens))
    }
}

//! Model gateway: one completion interface over pluggable backends, with a
//! token ledger priced per million input/output tokens.

mod config;
#[cfg(feature = "http")]
mod http;
mod scripted;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendKind, GatewayConfig, HttpSettings, ENV_API_KEY, ENV_BACKEND, ENV_ENDPOINT, ENV_MODEL, ENV_RULES};
#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use scripted::{Rule, RuleSet, ScriptedBackend};

use crate::model::EngineConfig;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Who is asking and on behalf of which domain; used for ledger tags and
/// scripted-rule matching, never sent to remote backends.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub agent: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub model: String,
    pub max_output_tokens: u32,
    pub meta: RequestMeta,
}

impl CompletionRequest {
    pub fn user(prompt: impl Into<String>, meta: RequestMeta) -> Self {
        Self {
            messages: vec![Message { role: Role::User, content: prompt.into() }],
            model: String::new(),
            max_output_tokens: 4096,
            meta,
        }
    }

    /// All message contents joined by blank lines.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self { input_tokens, output_tokens }
    }

    pub fn is_zero(&self) -> bool {
        self.input_tokens == 0 && self.output_tokens == 0
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage::new(self.input_tokens + rhs.input_tokens, self.output_tokens + rhs.output_tokens)
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: Usage,
}

/// Failure of a single backend round-trip. `billed` is whatever the
/// provider charged for the failed attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, billed: Usage },
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64>, billed: Usage },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("no scripted reply")]
    NoScriptedReply,
}

impl BackendError {
    fn billed(&self) -> Usage {
        match self {
            BackendError::Transport { billed, .. } | BackendError::RateLimited { billed, .. } => *billed,
            _ => Usage::default(),
        }
    }

    fn retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::RateLimited { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("no scripted reply")]
    NoScriptedReply,
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A model provider.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

/// Prices in currency per million tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable<S> {
    pub input_per_m: S,
    pub output_per_m: S,
}

impl<S: Scalar> PriceTable<S> {
    pub fn new(input_per_m: S, output_per_m: S) -> Self {
        Self { input_per_m, output_per_m }
    }

    pub fn from_config(config: &EngineConfig) -> Self {
        Self::new(S::from_config(config.price_per_m_input), S::from_config(config.price_per_m_output))
    }

    pub fn price(&self, usage: &Usage) -> S {
        let million = S::from_count(1_000_000);
        (S::from_u64(usage.input_tokens).expect("token count") * self.input_per_m.clone()
            + S::from_u64(usage.output_tokens).expect("token count") * self.output_per_m.clone())
            / million
    }
}

/// Σ (in·price_in + out·price_out) / 10⁶ over the given usages.
pub fn cost<'a, S: Scalar>(usages: impl IntoIterator<Item = &'a Usage>, prices: &PriceTable<S>) -> S {
    let total: Usage = usages.into_iter().copied().sum();
    prices.price(&total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub agent: String,
    pub domain: String,
    pub usage: Usage,
}

/// Append-only usage log. Appends are atomic; totals are exact under
/// concurrent use.
#[derive(Debug, Default)]
pub struct CostLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, entry: LedgerEntry) {
        self.entries.lock().expect("ledger lock").push(entry);
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn totals(&self) -> Usage {
        self.entries.lock().expect("ledger lock").iter().map(|e| e.usage).sum()
    }

    pub fn cost<S: Scalar>(&self, prices: &PriceTable<S>) -> S {
        prices.price(&self.totals())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first; at least 1.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    fn delay(&self, attempt: u32, hint_ms: Option<u64>) -> Duration {
        let backoff = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        let hinted = hint_ms.map(Duration::from_millis).unwrap_or_default();
        backoff.max(hinted).min(self.max_delay)
    }
}

/// A backend plus its ledger and retry policy.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    ledger: Arc<CostLedger>,
    retry: RetryPolicy,
    model: String,
    max_output_tokens: u32,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend.name()).field("model", &self.model).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            ledger: Arc::new(CostLedger::new()),
            retry: RetryPolicy::default(),
            model: String::new(),
            max_output_tokens: 4096,
        }
    }

    pub fn scripted(rules: RuleSet) -> Self {
        Self::new(Arc::new(ScriptedBackend::new(rules))).with_retry(RetryPolicy::immediate(1))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_model(mut self, model: impl Into<String>, max_output_tokens: u32) -> Self {
        self.model = model.into();
        self.max_output_tokens = max_output_tokens;
        self
    }

    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        config.build()
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// One logical completion; every attempt's billed usage lands in the
    /// ledger, so a retried call costs what the provider charged for each try.
    pub fn complete(&self, mut request: CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        if request.model.is_empty() {
            request.model = self.model.clone();
        }
        request.max_output_tokens = request.max_output_tokens.min(self.max_output_tokens);
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = self.backend.send(&request);
            let usage = match &result {
                Ok(r) => r.usage,
                Err(e) => e.billed(),
            };
            if !usage.is_zero() || result.is_ok() {
                self.ledger.record(LedgerEntry {
                    agent: request.meta.agent.clone(),
                    domain: request.meta.domain.clone(),
                    usage,
                });
            }
            match result {
                Ok(r) => return Ok(r),
                Err(e) if e.retryable() && attempt < attempts => {
                    let hint = match &e {
                        BackendError::RateLimited { retry_after_ms, .. } => *retry_after_ms,
                        _ => None,
                    };
                    std::thread::sleep(self.retry.delay(attempt - 1, hint));
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport { message, attempts: attempt })
                }
                Err(BackendError::RateLimited { .. }) => return Err(GatewayError::RateLimited { attempts: attempt }),
                Err(BackendError::Malformed(m)) => return Err(GatewayError::Malformed(m)),
                Err(BackendError::NoScriptedReply) => return Err(GatewayError::NoScriptedReply),
            }
        }
    }
}

#[cfg(test)]
mod tests;

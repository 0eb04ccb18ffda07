//! Deterministic scripted backend: the first rule whose substrings all occur
//! in the prompt supplies the reply.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    /// Substring that must occur in the prompt.
    #[serde(rename = "match")]
    pub pattern: String,
    /// Further substrings that must all occur.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<String>,
    /// Substrings that must not occur.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excludes: Vec<String>,
    /// Exact match against the request's domain tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Exact match against the request's agent tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// Reply text; `{domain}` and `{agent}` are replaced from the request.
    pub reply: String,
    /// Reported usage; estimated from text length (4 chars/token) when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl Rule {
    pub fn new(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            requires: Vec::new(),
            excludes: Vec::new(),
            domain: None,
            agent: None,
            reply: reply.into(),
            input_tokens: None,
            output_tokens: None,
        }
    }

    pub fn tokens(mut self, input: u64, output: u64) -> Self {
        self.input_tokens = Some(input);
        self.output_tokens = Some(output);
        self
    }

    fn matches(&self, prompt: &str, request: &CompletionRequest) -> bool {
        prompt.contains(&self.pattern)
            && self.requires.iter().all(|r| prompt.contains(r.as_str()))
            && !self.excludes.iter().any(|x| prompt.contains(x.as_str()))
            && self.domain.as_ref().is_none_or(|d| *d == request.meta.domain)
            && self.agent.as_ref().is_none_or(|a| *a == request.meta.agent)
    }
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default, rename = "rule")]
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// The rules that drive the bundled scenario pack.
    pub fn bundled() -> Self {
        Self::from_toml(include_str!("../../data/mock_rules.toml")).expect("bundled mock rules parse")
    }

    pub fn extend(&mut self, other: RuleSet) {
        self.rules.extend(other.rules);
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: RuleSet,
}

impl ScriptedBackend {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules }
    }

    /// Index of the rule that would answer `request`.
    pub fn matching_rule(&self, request: &CompletionRequest) -> Option<usize> {
        let prompt = request.prompt_text();
        self.rules.rules.iter().position(|r| r.matches(&prompt, request))
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let prompt = request.prompt_text();
        let rule = self.rules.rules.iter().find(|r| r.matches(&prompt, request)).ok_or(BackendError::NoScriptedReply)?;
        let text = rule.reply.replace("{domain}", &request.meta.domain).replace("{agent}", &request.meta.agent);
        let usage = Usage::new(
            rule.input_tokens.unwrap_or_else(|| estimate_tokens(&prompt)),
            rule.output_tokens.unwrap_or_else(|| estimate_tokens(&text)),
        );
        Ok(CompletionResponse { text, usage })
    }
}

//! OpenAI-compatible chat-completions adapter.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, Usage};

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// `endpoint` is the full chat-completions url.
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), api_key, agent }
    }

    fn body(request: &CompletionRequest) -> String {
        let messages: Vec<Value> =
            request.messages.iter().map(|m| json!({"role": m.role, "content": m.content})).collect();
        json!({
            "model": request.model,
            "messages": messages,
            "max_tokens": request.max_output_tokens,
            "temperature": 0,
        })
        .to_string()
    }
}

fn parse_reply(text: &str) -> Result<CompletionResponse, BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let tokens = |key: &str| v.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(CompletionResponse {
        text: content.to_string(),
        usage: Usage::new(tokens("prompt_tokens"), tokens("completion_tokens")),
    })
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let transport = |e: ureq::Error| BackendError::Transport { message: e.to_string(), billed: Usage::default() };
        let mut call = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send(Self::body(request)).map_err(transport)?;
        let status = response.status().as_u16();
        let retry_after_ms = response
            .headers()
            .get("retry-after")
            .and_then(|h| h.to_str().ok())
            .and_then(|s| s.trim().parse::<u64>().ok())
            .map(|secs| secs * 1000);
        let text = response.body_mut().read_to_string().map_err(transport)?;
        match status {
            200..=299 => parse_reply(&text),
            429 => Err(BackendError::RateLimited { retry_after_ms, billed: Usage::default() }),
            500..=599 => Err(BackendError::Transport { message: format!("status {status}"), billed: Usage::default() }),
            _ => Err(BackendError::Malformed(format!("status {status}: {}", text.chars().take(200).collect::<String>()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_parsing() {
        let ok = parse_reply(r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#)
            .unwrap();
        assert_eq!(ok, CompletionResponse { text: "hi".into(), usage: Usage::new(7, 2) });
        assert!(matches!(parse_reply("{}"), Err(BackendError::Malformed(_))));
        assert!(matches!(parse_reply("not json"), Err(BackendError::Malformed(_))));
    }
}

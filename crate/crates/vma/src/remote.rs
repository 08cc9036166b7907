//! Blocking client for chat-completions style HTTP endpoints.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use vma_core::backend::{BackendError, ChatRequest, Message, ModelBackend, ModelTurnWire, Role};

pub const ENDPOINT_VAR: &str = "VMA_ENDPOINT";
pub const API_KEY_VAR: &str = "VMA_API_KEY";
pub const MODEL_VAR: &str = "VMA_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based), doubling each time.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Replaces every request's `model_id` when set.
    pub model: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    /// `None` when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|e| !e.trim().is_empty())?;
        let mut config = RemoteConfig::new(endpoint);
        config.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        config.model = std::env::var(MODEL_VAR).ok().filter(|m| !m.is_empty());
        Some(config)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct RemoteBackend {
    agent: ureq::Agent,
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { agent, config }
    }

    fn attempt(&self, body: &Value) -> Result<ModelTurnWire, BackendError> {
        let mut call = self
            .agent
            .post(self.config.url())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(body)
            .map_err(|e| BackendError::retryable(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| BackendError::permanent(format!("malformed response body: {e}")))?;
                parse_completion(&value)
            }
            408 | 409 | 429 | 500..=599 => Err(BackendError::retryable(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(BackendError::permanent(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}

impl ModelBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        request.validate()?;
        let body = request_body(request, self.config.model.as_deref())?;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retryable() && attempt < self.config.retry.max_retries => {
                    std::thread::sleep(self.config.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(BackendError::permanent(format!("gave up after {attempt} retries: {e}")))
                }
                other => return other,
            }
        }
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

fn message_json(message: &Message) -> Result<Value, BackendError> {
    let role = role_name(message.role);
    if let Some(call) = &message.tool_call {
        return Ok(json!({
            "role": role,
            "content": Value::Null,
            "tool_calls": [{
                "id": call.id,
                "type": "function",
                "function": {"name": call.name, "arguments": call.arguments}
            }]
        }));
    }
    if let Some(id) = &message.tool_call_id {
        return Ok(json!({"role": role, "tool_call_id": id, "content": message.content}));
    }
    match message.media.as_deref() {
        Some(media) if !media.is_empty() => {
            let mut parts = vec![json!({"type": "text", "text": message.content})];
            for m in media {
                let bytes = std::fs::read(&m.uri)
                    .map_err(|e| BackendError::permanent(format!("cannot read media {}: {e}", m.uri)))?;
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{};base64,{data}", m.mime)}
                }));
            }
            Ok(json!({"role": role, "content": parts}))
        }
        _ => Ok(json!({"role": role, "content": message.content})),
    }
}

/// The JSON body sent for `request`; media files are inlined as base64 image parts.
pub fn request_body(request: &ChatRequest, model_override: Option<&str>) -> Result<Value, BackendError> {
    let messages = request
        .messages
        .iter()
        .map(message_json)
        .collect::<Result<Vec<_>, _>>()?;
    let mut body = json!({
        "model": model_override.unwrap_or(&request.model_id),
        "messages": messages,
        "temperature": request.temperature,
    });
    if let Some(tools) = request.tool_schemas.as_deref().filter(|t| !t.is_empty()) {
        body["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {"name": t.name, "description": t.description, "parameters": t.parameters}
                })
            })
            .collect();
    }
    Ok(body)
}

/// First choice of a completion response: a tool call if present, else text.
pub fn parse_completion(value: &Value) -> Result<ModelTurnWire, BackendError> {
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::permanent("response has no choices[0].message"))?;
    if let Some(call) = message.pointer("/tool_calls/0/function") {
        let name = call
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::permanent("tool call without a name"))?;
        let arguments = match call.get("arguments") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => "{}".to_string(),
        };
        return Ok(ModelTurnWire::ToolCall {
            name: name.to_string(),
            arguments,
        });
    }
    match message.get("content") {
        Some(Value::String(s)) => Ok(ModelTurnWire::text(s.clone())),
        Some(Value::Array(parts)) => Ok(ModelTurnWire::text(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        )),
        _ => Err(BackendError::permanent(
            "response message has neither content nor tool calls",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vma_core::backend::{MediaRef, ToolSchema, WireToolCall};

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
        assert_eq!(p.delay(10), Duration::from_secs(8));
    }

    #[test]
    fn body_shape() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("f.png");
        std::fs::write(&img, b"png").unwrap();
        let request = ChatRequest::new(
            "agent",
            vec![
                Message::system("sys"),
                Message::user_with_media(
                    "look",
                    vec![MediaRef {
                        uri: img.display().to_string(),
                        digest: "d".into(),
                        mime: "image/png".into(),
                    }],
                ),
                Message::assistant_tool_call(WireToolCall {
                    id: "c1".into(),
                    name: "final_answer".into(),
                    arguments: "{\"option\":\"A\"}".into(),
                }),
                Message::tool_result("c1", "ok"),
            ],
        )
        .with_tools(vec![ToolSchema {
            name: "final_answer".into(),
            description: "d".into(),
            parameters: json!({"type": "object"}),
        }]);
        let body = request_body(&request, Some("gpt")).unwrap();
        assert_eq!(body["model"], "gpt");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(
            body["messages"][1]["content"][1]["image_url"]["url"],
            "data:image/png;base64,cG5n"
        );
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["name"], "final_answer");
        assert_eq!(body["messages"][3]["tool_call_id"], "c1");
        assert_eq!(body["tools"][0]["function"]["name"], "final_answer");
    }

    #[test]
    fn parses_text_and_tool_calls() {
        let text = json!({"choices": [{"message": {"role": "assistant", "content": "Answer: B"}}]});
        assert_eq!(parse_completion(&text).unwrap(), ModelTurnWire::text("Answer: B"));
        let call = json!({"choices": [{"message": {"content": null, "tool_calls": [
            {"id": "x", "type": "function", "function": {"name": "final_answer", "arguments": "{\"option\":\"C\"}"}}
        ]}}]});
        assert_eq!(
            parse_completion(&call).unwrap(),
            ModelTurnWire::ToolCall {
                name: "final_answer".into(),
                arguments: "{\"option\":\"C\"}".into()
            }
        );
        assert!(parse_completion(&json!({"error": "x"})).is_err());
    }

    #[test]
    fn url_suffix() {
        assert_eq!(RemoteConfig::new("http://h/v1/").url(), "http://h/v1/chat/completions");
        assert_eq!(
            RemoteConfig::new("http://h/v1/chat/completions").url(),
            "http://h/v1/chat/completions"
        );
    }
}

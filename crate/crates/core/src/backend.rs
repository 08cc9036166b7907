//! Model access contract: request/response shapes, the backend trait, and
//! canonical request hashing used to key cassettes and scripted mocks.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// An attached image. `uri` locates it; `digest` identifies its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub uri: String,
    pub digest: String,
    pub mime: String,
}

/// A tool invocation issued by the model, as carried in conversation history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireToolCall {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<Vec<MediaRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<WireToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            media: None,
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn user_with_media(content: impl Into<String>, media: Vec<MediaRef>) -> Self {
        let mut m = Self::plain(Role::User, content);
        m.media = Some(media);
        m
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_call(call: WireToolCall) -> Self {
        let mut m = Self::plain(Role::Assistant, "");
        m.tool_call = Some(call);
        m
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        let mut m = Self::plain(Role::Tool, content);
        m.tool_call_id = Some(call_id.into());
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON-schema object describing the arguments.
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_schemas: Option<Vec<ToolSchema>>,
    #[serde(default)]
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidRequest {
    #[error("request has no messages")]
    Empty,
    #[error("first message must be system or user")]
    BadFirstRole,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            messages,
            tool_schemas: None,
            temperature: 0.0,
        }
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>) -> Self {
        self.tool_schemas = if tools.is_empty() { None } else { Some(tools) };
        self
    }

    pub fn validate(&self) -> Result<(), InvalidRequest> {
        match self.messages.first() {
            None => Err(InvalidRequest::Empty),
            Some(m) if matches!(m.role, Role::System | Role::User) => Ok(()),
            Some(_) => Err(InvalidRequest::BadFirstRole),
        }
    }

    /// Text of the first system message, if any.
    pub fn system_prompt(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn has_tool(&self, name: &str) -> bool {
        self.tool_schemas
            .as_ref()
            .is_some_and(|tools| tools.iter().any(|t| t.name == name))
    }
}

/// One model turn: plain text or a single tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTurnWire {
    Text { content: String },
    ToolCall { name: String, arguments: String },
}

impl ModelTurnWire {
    pub fn text(content: impl Into<String>) -> Self {
        ModelTurnWire::Text {
            content: content.into(),
        }
    }

    pub fn tool_call(name: impl Into<String>, arguments: &Value) -> Self {
        ModelTurnWire::ToolCall {
            name: name.into(),
            arguments: serde_json::to_string(arguments).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend failure: {message}")]
    Failure { message: String, retryable: bool },
    #[error("cassette has no entry for request key {key}")]
    CassetteMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] InvalidRequest),
    #[error("unexpected model turn: {0}")]
    UnexpectedTurn(String),
}

impl BackendError {
    pub fn permanent(message: impl Into<String>) -> Self {
        BackendError::Failure {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(message: impl Into<String>) -> Self {
        BackendError::Failure {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Failure { retryable: true, .. })
    }
}

/// Anything that can answer a chat request with one turn.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError>;
}

pub type SharedBackend = Arc<dyn ModelBackend>;

impl<B: ModelBackend + ?Sized> ModelBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Serialize)]
struct CanonicalMedia<'a> {
    digest: &'a str,
    mime: &'a str,
}

#[derive(Serialize)]
struct CanonicalMessage<'a> {
    role: Role,
    content: &'a str,
    media: Vec<CanonicalMedia<'a>>,
    tool_call: Option<&'a WireToolCall>,
    tool_call_id: Option<&'a str>,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model_id: &'a str,
    messages: Vec<CanonicalMessage<'a>>,
    tool_schemas: Vec<&'a ToolSchema>,
    temperature: f64,
}

/// Deterministic byte form of a request: fixed field order, sorted JSON
/// object keys, media identified by digest rather than location.
pub fn canonicalize(request: &ChatRequest) -> Vec<u8> {
    let canonical = CanonicalRequest {
        model_id: &request.model_id,
        messages: request
            .messages
            .iter()
            .map(|m| CanonicalMessage {
                role: m.role,
                content: &m.content,
                media: m
                    .media
                    .iter()
                    .flatten()
                    .map(|r| CanonicalMedia {
                        digest: &r.digest,
                        mime: &r.mime,
                    })
                    .collect(),
                tool_call: m.tool_call.as_ref(),
                tool_call_id: m.tool_call_id.as_deref(),
            })
            .collect(),
        tool_schemas: request.tool_schemas.iter().flatten().collect(),
        temperature: request.temperature,
    };
    // serde_json's Map is ordered by key unless `preserve_order` is enabled,
    // which this crate never turns on.
    serde_json::to_vec(&canonical).unwrap_or_default()
}

/// Content hash of the canonical form; the cassette and mock lookup key.
pub fn request_key(request: &ChatRequest) -> String {
    sha256_hex(&canonicalize(request))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    fn media(uri: &str, digest: &str) -> MediaRef {
        MediaRef {
            uri: uri.into(),
            digest: digest.into(),
            mime: "image/png".into(),
        }
    }

    #[test]
    fn media_path_does_not_affect_key() {
        let a = ChatRequest::new(
            "m",
            vec![Message::user_with_media(
                "describe",
                vec![media("/a/frame_000000.png", "d1")],
            )],
        );
        let b = ChatRequest::new(
            "m",
            vec![Message::user_with_media(
                "describe",
                vec![media("/elsewhere/x.png", "d1")],
            )],
        );
        assert_eq!(canonicalize(&a), canonicalize(&b));
        assert_eq!(request_key(&a), request_key(&b));
    }

    #[test]
    fn message_order_matters() {
        let a = ChatRequest::new("m", vec![Message::system("s"), Message::user("u")]);
        let b = ChatRequest::new("m", vec![Message::user("u"), Message::system("s")]);
        assert_ne!(request_key(&a), request_key(&b));
    }

    #[test]
    fn schema_key_order_is_normalized() {
        let t1 = ToolSchema {
            name: "t".into(),
            description: "d".into(),
            parameters: serde_json::from_str(r#"{"b":1,"a":2}"#).unwrap(),
        };
        let t2 = ToolSchema {
            parameters: json!({"a": 2, "b": 1}),
            ..t1.clone()
        };
        let a = ChatRequest::new("m", vec![Message::user("u")]).with_tools(vec![t1]);
        let b = ChatRequest::new("m", vec![Message::user("u")]).with_tools(vec![t2]);
        assert_eq!(request_key(&a), request_key(&b));
    }

    #[test]
    fn golden_key_is_stable() {
        let req = ChatRequest::new("gpt-4o", vec![Message::system("s"), Message::user("hello")]);
        assert_eq!(
            core::str::from_utf8(&canonicalize(&req)).unwrap(),
            r#"{"model_id":"gpt-4o","messages":[{"role":"system","content":"s","media":[],"tool_call":null,"tool_call_id":null},{"role":"user","content":"hello","media":[],"tool_call":null,"tool_call_id":null}],"tool_schemas":[],"temperature":0.0}"#
        );
        assert_eq!(request_key(&req), GOLDEN_KEY);
    }

    // Changing this value invalidates every recorded cassette.
    const GOLDEN_KEY: &str = "eb8855785fed30141d3bed07884bcf1d818cf8efcf8d261f8457b7f805f654f2";

    #[test]
    fn validation() {
        assert_eq!(ChatRequest::new("m", vec![]).validate(), Err(InvalidRequest::Empty));
        assert_eq!(
            ChatRequest::new("m", vec![Message::assistant("x")]).validate(),
            Err(InvalidRequest::BadFirstRole)
        );
    }
}

//! The tool-calling loop shared by the three modality agents, and the
//! modality tools themselves.
//!
//! An agent talks only to its own backend and its own tool. Each call to
//! [`AgentSession::ask`] runs the loop until the model commits to an option
//! through `final_answer`. Tool use is capped by `tool_budget`: a request
//! past the cap is refused with [`FORCED_DECISION_MESSAGE`] and the next
//! turn must be an answer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::backend::{
    BackendError, ChatRequest, MediaRef, Message, ModelTurnWire, SharedBackend, ToolSchema, WireToolCall,
};
use crate::captioning::{caption_video, Caption, CaptionError, CaptionSettings};
use crate::organizer::{final_answer_schema, parse_option_label, FINAL_ANSWER_TOOL};
use crate::scenegraph::{
    build_scene_graphs, triplets_in_range, triplets_with_entity, GraphError, GraphSettings, SceneGraph, Triplet,
};
use crate::types::{
    AgentReport, EvidenceItem, EvidenceKind, InvalidSpan, ModalityKind, Participant, PendingEvent, Phase,
    QuestionRecord, TimeSpan,
};

pub const CAPTION_TOOL: &str = "caption_analysis";
pub const VIDEO_TOOL: &str = "video_analysis";
pub const GRAPH_TOOL: &str = "scene_graph_query";

pub const DEFAULT_TOOL_BUDGET: u32 = 5;
pub const DEFAULT_TOOL_RESULT_CHARS: usize = 8000;
/// Plain-text turns that carry neither a tool call nor an option before the agent gives up.
pub const MAX_NUDGES: u32 = 2;

pub const FORCED_DECISION_MESSAGE: &str =
    "Tool budget exhausted. You must answer now: call final_answer with your best option.";
pub const NUDGE_MESSAGE: &str = "Either call your analysis tool or call final_answer with an option letter.";
const ANSWER_RECORDED: &str = "Answer recorded.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentConfig {
    pub modality: ModalityKind,
    pub tool_budget: u32,
    pub backend_id: String,
    pub model_id: String,
    pub system_prompt: String,
    pub tool_result_chars: usize,
}

impl AgentConfig {
    pub fn new(modality: ModalityKind) -> Self {
        AgentConfig {
            modality,
            tool_budget: DEFAULT_TOOL_BUDGET,
            backend_id: "default".to_string(),
            model_id: "agent".to_string(),
            system_prompt: default_system_prompt(modality).to_string(),
            tool_result_chars: DEFAULT_TOOL_RESULT_CHARS,
        }
    }
}

pub fn default_system_prompt(modality: ModalityKind) -> &'static str {
    match modality {
        ModalityKind::Text => {
            "You are the Text Analysis Agent. You answer multiple-choice questions about a video using only \
its captions. Call caption_analysis to read question-guided captions for the whole video or a range of \
segments, as often as you need. When you are confident, call final_answer with the option letter, your \
rationale, and the captions (with timestamps) that support it."
        }
        ModalityKind::Video => {
            "You are the Video Analysis Agent. You answer multiple-choice questions about a video by looking at \
it. Call video_analysis with a focused question about the footage, as often as you need. When you are \
confident, call final_answer with the option letter, your rationale, and what you observed."
        }
        ModalityKind::Graph => {
            "You are the Graph Analysis Agent. You answer multiple-choice questions about a video using scene \
graphs: (subject, relation, object) triplets over time. Call scene_graph_query to look up triplets by time \
range or by entity, as often as you need. When you are confident, call final_answer with the option letter, \
your rationale, and the supporting triplets with their timestamps."
        }
    }
}

pub fn tool_name(modality: ModalityKind) -> &'static str {
    match modality {
        ModalityKind::Text => CAPTION_TOOL,
        ModalityKind::Video => VIDEO_TOOL,
        ModalityKind::Graph => GRAPH_TOOL,
    }
}

pub fn tool_schema(modality: ModalityKind) -> ToolSchema {
    let (description, parameters) = match modality {
        ModalityKind::Text => (
            "Read question-guided captions with timestamps. Omit start/end for all segments.",
            json!({
                "type": "object",
                "properties": {
                    "start": {"type": "integer", "description": "First segment index."},
                    "end": {"type": "integer", "description": "Last segment index, inclusive."}
                }
            }),
        ),
        ModalityKind::Video => (
            "Ask a vision-language model a question about the video.",
            json!({
                "type": "object",
                "properties": {"query": {"type": "string"}},
                "required": ["query"]
            }),
        ),
        ModalityKind::Graph => (
            "Query scene-graph triplets by time range (seconds) or by entity label.",
            json!({
                "type": "object",
                "properties": {
                    "kind": {"type": "string", "enum": ["range", "entity"]},
                    "start": {"type": "number"},
                    "end": {"type": "number"},
                    "label": {"type": "string"}
                },
                "required": ["kind"]
            }),
        ),
    };
    ToolSchema {
        name: tool_name(modality).to_string(),
        description: description.to_string(),
        parameters,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelTurn {
    ToolRequest(ToolCall),
    FinalAnswer {
        option: usize,
        rationale: String,
        evidence: Vec<EvidenceItem>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnError {
    #[error("turn carries neither a tool call nor an answer")]
    Unparsed,
    #[error("option {option} is out of range for {count} options")]
    InvalidOption { option: usize, count: usize },
}

fn parse_evidence(value: Option<&Value>) -> Vec<EvidenceItem> {
    let Some(Value::Array(items)) = value else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|item| {
            let kind = match item.get("kind").and_then(Value::as_str)? {
                "caption_ref" | "caption" => EvidenceKind::CaptionRef,
                "triplet" => EvidenceKind::Triplet,
                "video_observation" | "video" => EvidenceKind::VideoObservation,
                _ => return None,
            };
            let content = item.get("content").and_then(Value::as_str)?.to_string();
            let time_span = match (
                item.get("start").and_then(Value::as_f64),
                item.get("end").and_then(Value::as_f64),
            ) {
                (Some(s), Some(e)) => TimeSpan::new(s, e).ok(),
                _ => None,
            };
            Some(EvidenceItem {
                kind,
                time_span,
                content,
            })
        })
        .collect()
}

/// Interprets a wire turn for a question with `count` options. Text turns
/// count as answers only when they carry an explicit option letter.
pub fn decode_turn(turn: &ModelTurnWire, count: usize) -> Result<ModelTurn, TurnError> {
    match turn {
        ModelTurnWire::ToolCall { name, arguments } => {
            let args: Map<String, Value> = serde_json::from_str(arguments).unwrap_or_default();
            if name != FINAL_ANSWER_TOOL {
                return Ok(ModelTurn::ToolRequest(ToolCall {
                    tool_name: name.clone(),
                    arguments: args,
                }));
            }
            let option = match args.get("option") {
                Some(Value::Number(n)) => n.as_u64().map(|n| n as usize),
                Some(Value::String(s)) => parse_option_label(s, 26),
                _ => None,
            }
            .ok_or(TurnError::Unparsed)?;
            if option >= count {
                return Err(TurnError::InvalidOption { option, count });
            }
            Ok(ModelTurn::FinalAnswer {
                option,
                rationale: args
                    .get("rationale")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                evidence: parse_evidence(args.get("evidence")),
            })
        }
        ModelTurnWire::Text { content } => {
            let last_line = content.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
            let option = parse_option_label(content, 26)
                .or_else(|| parse_option_label(last_line, 26))
                .ok_or(TurnError::Unparsed)?;
            if option >= count {
                return Err(TurnError::InvalidOption { option, count });
            }
            Ok(ModelTurn::FinalAnswer {
                option,
                rationale: content.clone(),
                evidence: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("no captions: {0}")]
    NoCaptions(CaptionError),
    #[error("requested segments {start}..={end} but valid segments are 0..={last}")]
    CaptionRange { start: usize, end: usize, last: usize },
    #[error("no scene graphs: {0}")]
    NoGraphs(GraphError),
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    InvalidSpan(#[from] InvalidSpan),
    #[error("video backend failed: {0}")]
    Backend(BackendError),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("unknown tool `{name}`; available: {available}")]
    UnknownTool { name: String, available: String },
}

impl ToolError {
    /// Errors that end the agent run rather than being shown to the model.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ToolError::NoCaptions(_) | ToolError::NoGraphs(_) | ToolError::Backend(_)
        )
    }
}

/// Backend and settings used to caption frames on first use.
#[derive(Clone)]
pub struct CaptionSource {
    pub frames: Vec<MediaRef>,
    pub backend: SharedBackend,
    pub settings: CaptionSettings,
}

/// Captions for one video, generated lazily when only a source is known.
#[derive(Clone, Default)]
pub struct CaptionStore {
    captions: Option<Vec<Caption>>,
    source: Option<CaptionSource>,
}

impl CaptionStore {
    pub fn ready(captions: Vec<Caption>) -> Self {
        CaptionStore {
            captions: Some(captions),
            source: None,
        }
    }

    pub fn lazy(source: CaptionSource) -> Self {
        CaptionStore {
            captions: None,
            source: Some(source),
        }
    }

    pub fn captions(&self) -> Option<&[Caption]> {
        self.captions.as_deref()
    }

    pub fn ensure(&mut self, question: &QuestionRecord) -> Result<&[Caption], CaptionError> {
        if self.captions.is_none() {
            let source = self.source.as_ref().ok_or(CaptionError::NoFrames)?;
            let captions = caption_video(&source.frames, question, source.backend.as_ref(), &source.settings)?;
            self.captions = Some(captions);
        }
        Ok(self.captions.as_deref().expect("just filled"))
    }
}

/// Scene graphs for one video, built lazily from its captions.
#[derive(Clone)]
pub struct GraphStore {
    graphs: Option<Vec<SceneGraph>>,
    captions: CaptionStore,
    builder: Option<(SharedBackend, GraphSettings)>,
}

impl GraphStore {
    pub fn ready(graphs: Vec<SceneGraph>) -> Self {
        GraphStore {
            graphs: Some(graphs),
            captions: CaptionStore::default(),
            builder: None,
        }
    }

    pub fn lazy(captions: CaptionStore, backend: SharedBackend, settings: GraphSettings) -> Self {
        GraphStore {
            graphs: None,
            captions,
            builder: Some((backend, settings)),
        }
    }

    pub fn graphs(&self) -> Option<&[SceneGraph]> {
        self.graphs.as_deref()
    }

    pub fn ensure(&mut self, question: &QuestionRecord) -> Result<&[SceneGraph], ToolError> {
        if self.graphs.is_none() {
            let (backend, settings) = self
                .builder
                .as_ref()
                .ok_or(ToolError::NoGraphs(GraphError::NoCaptions))?;
            let captions = self.captions.ensure(question).map_err(ToolError::NoCaptions)?;
            let graphs = build_scene_graphs(captions, backend.as_ref(), settings).map_err(ToolError::NoGraphs)?;
            self.graphs = Some(graphs);
        }
        Ok(self.graphs.as_deref().expect("just filled"))
    }
}

/// The media a video agent's tool looks at, and the model it asks.
#[derive(Clone)]
pub struct VideoHandle {
    pub media: Vec<MediaRef>,
    pub backend: SharedBackend,
    pub model_id: String,
}

#[derive(Clone)]
pub enum ModalityContext {
    Text(CaptionStore),
    Video(VideoHandle),
    Graph(GraphStore),
}

impl ModalityContext {
    pub fn modality(&self) -> ModalityKind {
        match self {
            ModalityContext::Text(_) => ModalityKind::Text,
            ModalityContext::Video(_) => ModalityKind::Video,
            ModalityContext::Graph(_) => ModalityKind::Graph,
        }
    }
}

fn caption_line(index: usize, caption: &Caption) -> String {
    format!("[segment {index} | {}] {}", caption.time_span(), caption.text)
}

/// Captions for segments `range` (inclusive), or all of them.
pub fn text_tool(
    range: Option<(usize, usize)>,
    store: &mut CaptionStore,
    question: &QuestionRecord,
) -> Result<String, ToolError> {
    let captions = store.ensure(question).map_err(ToolError::NoCaptions)?;
    let last = captions.len().saturating_sub(1);
    let (start, end) = range.unwrap_or((0, last));
    if captions.is_empty() || start > end || end > last {
        return Err(ToolError::CaptionRange { start, end, last });
    }
    let lines: Vec<String> = (start..=end).map(|i| caption_line(i, &captions[i])).collect();
    Ok(lines.join("\n"))
}

pub const VIDEO_TOOL_SYSTEM_PROMPT: &str =
    "You are a vision-language model. Answer the question about the attached video frames concisely.";

pub fn video_tool(query: &str, handle: &VideoHandle) -> Result<String, ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::EmptyQuery);
    }
    let request = ChatRequest::new(
        handle.model_id.clone(),
        vec![
            Message::system(VIDEO_TOOL_SYSTEM_PROMPT),
            Message::user_with_media(query.trim(), handle.media.clone()),
        ],
    );
    match handle.backend.complete(&request).map_err(ToolError::Backend)? {
        ModelTurnWire::Text { content } => Ok(content),
        ModelTurnWire::ToolCall { name, .. } => Err(ToolError::Backend(BackendError::UnexpectedTurn(format!(
            "tool call `{name}` from video model"
        )))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphQuery {
    Range(TimeSpan),
    Entity(String),
}

fn triplet_line(t: &Triplet) -> String {
    format!("[{}] {}", t.time_span, t)
}

pub fn graph_tool(query: &GraphQuery, store: &mut GraphStore, question: &QuestionRecord) -> Result<String, ToolError> {
    let graphs = store.ensure(question)?;
    let found = match query {
        GraphQuery::Range(span) => triplets_in_range(graphs, *span),
        GraphQuery::Entity(label) => {
            if label.trim().is_empty() {
                return Err(ToolError::EmptyQuery);
            }
            triplets_with_entity(graphs, label)
        }
    };
    if found.is_empty() {
        return Ok("No matching triplets.".to_string());
    }
    let lines: Vec<String> = found.iter().map(triplet_line).collect();
    Ok(lines.join("\n"))
}

fn arg_index(args: &Map<String, Value>, key: &str) -> Result<Option<usize>, ToolError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| ToolError::BadArguments(format!("`{key}` must be a non-negative integer"))),
    }
}

fn arg_seconds(args: &Map<String, Value>, key: &str) -> Result<f64, ToolError> {
    args.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| ToolError::BadArguments(format!("`{key}` must be a number")))
}

pub fn parse_graph_query(args: &Map<String, Value>) -> Result<GraphQuery, ToolError> {
    match args.get("kind").and_then(Value::as_str) {
        Some("range") => {
            let (start, end) = (arg_seconds(args, "start")?, arg_seconds(args, "end")?);
            Ok(GraphQuery::Range(TimeSpan::new(start, end)?))
        }
        Some("entity") => Ok(GraphQuery::Entity(
            args.get("label")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
        )),
        _ => Err(ToolError::BadArguments("`kind` must be \"range\" or \"entity\"".into())),
    }
}

/// Runs `call` against the context's tool.
pub fn execute_tool(
    call: &ToolCall,
    context: &mut ModalityContext,
    question: &QuestionRecord,
) -> Result<String, ToolError> {
    let expected = tool_name(context.modality());
    if call.tool_name != expected {
        return Err(ToolError::UnknownTool {
            name: call.tool_name.clone(),
            available: format!("{expected}, {FINAL_ANSWER_TOOL}"),
        });
    }
    match context {
        ModalityContext::Text(store) => {
            let start = arg_index(&call.arguments, "start")?;
            let end = arg_index(&call.arguments, "end")?;
            let range = match (start, end) {
                (None, None) => None,
                (Some(s), None) => Some((s, s)),
                (None, Some(e)) => Some((0, e)),
                (Some(s), Some(e)) => Some((s, e)),
            };
            text_tool(range, store, question)
        }
        ModalityContext::Video(handle) => {
            let query = call.arguments.get("query").and_then(Value::as_str).unwrap_or_default();
            video_tool(query, handle)
        }
        ModalityContext::Graph(store) => {
            let query = parse_graph_query(&call.arguments)?;
            graph_tool(&query, store, question)
        }
    }
}

/// Cuts `text` to `limit` characters, marking how much was dropped.
pub fn truncate_chars(text: String, limit: usize) -> String {
    let total = text.chars().count();
    if total <= limit {
        return text;
    }
    let mut cut: String = text.chars().take(limit).collect();
    cut.push_str(&format!("\n[truncated {} characters]", total - limit));
    cut
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("{modality} agent was given a {context} context")]
    ContextMismatch {
        modality: ModalityKind,
        context: ModalityKind,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tool(ToolError),
    #[error("no final answer after the {budget}-call budget was exhausted")]
    BudgetExceededNoAnswer { budget: u32 },
    #[error("model kept replying without a tool call or answer")]
    NoFinalAnswer,
    #[error("option {option} is out of range for {count} options")]
    InvalidOption { option: usize, count: usize },
}

/// One agent's private conversation with its backend.
pub struct AgentSession {
    config: AgentConfig,
    question: QuestionRecord,
    context: ModalityContext,
    backend: SharedBackend,
    conversation: Vec<Message>,
    events: Vec<PendingEvent>,
    calls_issued: u32,
}

impl AgentSession {
    pub fn new(
        config: AgentConfig,
        question: QuestionRecord,
        context: ModalityContext,
        backend: SharedBackend,
    ) -> Result<Self, AgentError> {
        if context.modality() != config.modality {
            return Err(AgentError::ContextMismatch {
                modality: config.modality,
                context: context.modality(),
            });
        }
        let conversation = vec![Message::system(config.system_prompt.clone())];
        Ok(AgentSession {
            config,
            question,
            context,
            backend,
            conversation,
            events: Vec::new(),
            calls_issued: 0,
        })
    }

    pub fn modality(&self) -> ModalityKind {
        self.config.modality
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn question(&self) -> &QuestionRecord {
        &self.question
    }

    pub fn conversation(&self) -> &[Message] {
        &self.conversation
    }

    pub fn context(&self) -> &ModalityContext {
        &self.context
    }

    /// Trace events produced since the last call, oldest first.
    pub fn take_events(&mut self) -> Vec<PendingEvent> {
        core::mem::take(&mut self.events)
    }

    fn me(&self) -> Participant {
        Participant::Agent(self.config.modality)
    }

    fn private_event(&mut self, phase: Phase, payload: String) {
        let me = self.me();
        self.events.push(PendingEvent::new(phase, me, [me], payload));
    }

    fn opening_message(&self, instruction: Option<&str>) -> String {
        let mut text = self.question.render();
        if let Some(extra) = instruction {
            text.push('\n');
            text.push_str(extra);
            text.push('\n');
        }
        text.push_str(&format!(
            "\nUse {} to gather evidence, then call {FINAL_ANSWER_TOOL}.",
            tool_name(self.config.modality)
        ));
        text
    }

    /// Runs the loop until the model answers. The first call presents the
    /// question; later calls (organizer follow-ups) append `instruction` only.
    pub fn ask(&mut self, instruction: Option<&str>) -> Result<AgentReport, AgentError> {
        let opening = if self.conversation.len() == 1 {
            self.opening_message(instruction)
        } else {
            instruction.unwrap_or(NUDGE_MESSAGE).to_string()
        };
        self.conversation.push(Message::user(opening));

        let count = self.question.options.len();
        let budget = self.config.tool_budget;
        let mut used = 0u32;
        let mut nudges = 0u32;
        let mut forced = false;
        loop {
            let tools = if forced {
                vec![final_answer_schema()]
            } else {
                vec![tool_schema(self.config.modality), final_answer_schema()]
            };
            let request = ChatRequest::new(self.config.model_id.clone(), self.conversation.clone()).with_tools(tools);
            let turn = self.backend.complete(&request)?;
            match decode_turn(&turn, count) {
                Ok(ModelTurn::FinalAnswer {
                    option,
                    rationale,
                    evidence,
                }) => {
                    self.record_turn(&turn, ANSWER_RECORDED);
                    return Ok(AgentReport {
                        modality: self.config.modality,
                        chosen: option,
                        rationale,
                        evidence,
                        tool_calls_used: used,
                    });
                }
                Ok(ModelTurn::ToolRequest(call)) => {
                    if forced {
                        return Err(AgentError::BudgetExceededNoAnswer { budget });
                    }
                    let call_id = self.record_call(&call);
                    let result = if used >= budget {
                        forced = true;
                        FORCED_DECISION_MESSAGE.to_string()
                    } else {
                        used += 1;
                        match execute_tool(&call, &mut self.context, &self.question) {
                            Ok(text) => truncate_chars(text, self.config.tool_result_chars),
                            Err(e) if e.is_fatal() => return Err(AgentError::Tool(e)),
                            Err(e) => format!("error: {e}"),
                        }
                    };
                    self.private_event(Phase::ToolResult, result.clone());
                    self.conversation.push(Message::tool_result(call_id, result));
                }
                Err(TurnError::InvalidOption { option, count }) => {
                    return Err(AgentError::InvalidOption { option, count })
                }
                Err(TurnError::Unparsed) => {
                    if forced {
                        return Err(AgentError::BudgetExceededNoAnswer { budget });
                    }
                    nudges += 1;
                    if nudges > MAX_NUDGES {
                        return Err(AgentError::NoFinalAnswer);
                    }
                    self.record_turn(&turn, NUDGE_MESSAGE);
                }
            }
        }
    }

    fn next_call_id(&mut self) -> String {
        let id = format!("call_{}_{}", self.config.modality, self.calls_issued);
        self.calls_issued += 1;
        id
    }

    fn record_call(&mut self, call: &ToolCall) -> String {
        let id = self.next_call_id();
        let arguments = serde_json::to_string(&call.arguments).unwrap_or_default();
        self.private_event(Phase::ToolCall, format!("{} {}", call.tool_name, arguments));
        self.conversation.push(Message::assistant_tool_call(WireToolCall {
            id: id.clone(),
            name: call.tool_name.clone(),
            arguments,
        }));
        id
    }

    /// Appends a non-tool-request turn plus the reply that keeps the
    /// conversation well formed for the next request.
    fn record_turn(&mut self, turn: &ModelTurnWire, reply: &str) {
        match turn {
            ModelTurnWire::Text { content } => {
                self.conversation.push(Message::assistant(content.clone()));
                self.conversation.push(Message::user(reply));
            }
            ModelTurnWire::ToolCall { name, arguments } => {
                let id = self.next_call_id();
                self.conversation.push(Message::assistant_tool_call(WireToolCall {
                    id: id.clone(),
                    name: name.clone(),
                    arguments: arguments.clone(),
                }));
                self.conversation.push(Message::tool_result(id, reply));
            }
        }
    }
}

/// Runs a fresh single-question agent loop.
pub fn run_agent(
    config: AgentConfig,
    question: &QuestionRecord,
    context: ModalityContext,
    backend: SharedBackend,
) -> Result<AgentReport, AgentError> {
    AgentSession::new(config, question.clone(), context, backend)?.ask(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_marks_dropped_characters() {
        let s = truncate_chars("abcdef".to_string(), 4);
        assert_eq!(s, "abcd\n[truncated 2 characters]");
        assert_eq!(truncate_chars("abc".to_string(), 4), "abc");
    }

    #[test]
    fn decode_final_answer_variants() {
        let t = ModelTurnWire::tool_call(FINAL_ANSWER_TOOL, &json!({"option": "B", "rationale": "r"}));
        assert_eq!(
            decode_turn(&t, 5),
            Ok(ModelTurn::FinalAnswer {
                option: 1,
                rationale: "r".into(),
                evidence: vec![]
            })
        );
        let t = ModelTurnWire::tool_call(FINAL_ANSWER_TOOL, &json!({"option": "E"}));
        assert_eq!(
            decode_turn(&t, 3),
            Err(TurnError::InvalidOption { option: 4, count: 3 })
        );
        let t = ModelTurnWire::text("Thinking...\nAnswer: C");
        assert!(matches!(
            decode_turn(&t, 5),
            Ok(ModelTurn::FinalAnswer { option: 2, .. })
        ));
        let t = ModelTurnWire::text("I am not sure yet.");
        assert_eq!(decode_turn(&t, 5), Err(TurnError::Unparsed));
        let t = ModelTurnWire::tool_call(CAPTION_TOOL, &json!({"start": 1}));
        assert!(matches!(decode_turn(&t, 5), Ok(ModelTurn::ToolRequest(_))));
    }

    #[test]
    fn evidence_parsing_skips_malformed_items() {
        let ev = parse_evidence(Some(&json!([
            {"kind": "caption_ref", "start": 0.0, "end": 4.0, "content": "boy holds toy"},
            {"kind": "triplet", "start": 5.0, "end": 1.0, "content": "(boy, holds, toy)"},
            {"kind": "bogus", "content": "x"},
            {"kind": "video_observation"}
        ])));
        assert_eq!(ev.len(), 2);
        assert!(ev[0].time_span.is_some());
        assert!(ev[1].time_span.is_none());
    }

    #[test]
    fn graph_query_arguments() {
        let args: Map<String, Value> =
            serde_json::from_value(json!({"kind": "range", "start": 5.0, "end": 1.0})).unwrap();
        assert!(matches!(parse_graph_query(&args), Err(ToolError::InvalidSpan(_))));
        let args: Map<String, Value> = serde_json::from_value(json!({"kind": "entity", "label": "cup"})).unwrap();
        assert_eq!(parse_graph_query(&args).unwrap(), GraphQuery::Entity("cup".into()));
        let args: Map<String, Value> = serde_json::from_value(json!({"kind": "color"})).unwrap();
        assert!(matches!(parse_graph_query(&args), Err(ToolError::BadArguments(_))));
    }
}

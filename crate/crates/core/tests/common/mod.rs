#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use vma_core::agents::{AgentConfig, AgentSession, CaptionStore, GraphStore, ModalityContext, VideoHandle};
use vma_core::backend::{BackendError, ChatRequest, ModelBackend, ModelTurnWire, SharedBackend};
use vma_core::captioning::{extract_keywords, Caption, FrameWindow};
use vma_core::scenegraph::{SceneGraph, Triplet};
use vma_core::types::{CategoryCode, ModalityKind, QuestionRecord, TimeSpan};

/// Plays back a fixed list of turns and records every request.
pub struct Script {
    turns: Mutex<VecDeque<Result<ModelTurnWire, BackendError>>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl Script {
    pub fn new(turns: impl IntoIterator<Item = ModelTurnWire>) -> Arc<Self> {
        Self::with_results(turns.into_iter().map(Ok))
    }

    pub fn with_results(turns: impl IntoIterator<Item = Result<ModelTurnWire, BackendError>>) -> Arc<Self> {
        Arc::new(Script {
            turns: Mutex::new(turns.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.turns.lock().unwrap().len()
    }
}

impl ModelBackend for Script {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        self.turns
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::permanent("script exhausted")))
    }
}

/// Answers every request through a closure.
pub struct Responder<F>(pub F);

impl<F> ModelBackend for Responder<F>
where
    F: Fn(&ChatRequest) -> Result<ModelTurnWire, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        (self.0)(request)
    }
}

pub fn answer(letter: char) -> ModelTurnWire {
    answer_with(letter, "looks right", &[])
}

pub fn answer_with(letter: char, rationale: &str, evidence: &[(f64, f64, &str)]) -> ModelTurnWire {
    let evidence: Vec<Value> = evidence
        .iter()
        .map(|(s, e, c)| json!({"kind": "caption_ref", "start": s, "end": e, "content": c}))
        .collect();
    ModelTurnWire::tool_call(
        "final_answer",
        &json!({"option": letter.to_string(), "rationale": rationale, "evidence": evidence}),
    )
}

pub fn caption_call() -> ModelTurnWire {
    ModelTurnWire::tool_call("caption_analysis", &json!({}))
}

pub fn video_call(query: &str) -> ModelTurnWire {
    ModelTurnWire::tool_call("video_analysis", &json!({ "query": query }))
}

pub fn graph_call(label: &str) -> ModelTurnWire {
    ModelTurnWire::tool_call("scene_graph_query", &json!({"kind": "entity", "label": label}))
}

pub fn ask(agent: &str, message: &str) -> ModelTurnWire {
    ModelTurnWire::tool_call("ask_agent", &json!({"agent": agent, "message": message}))
}

pub fn question() -> QuestionRecord {
    QuestionRecord {
        id: "q1".into(),
        video_id: "v1".into(),
        question: "What did the man do after picking up the cup?".into(),
        options: ["drink", "throw it", "wash it", "put it on the table", "dance"]
            .map(String::from)
            .to_vec(),
        gold: Some(3),
        category: CategoryCode::TemporalPreviousNext,
    }
}

pub fn captions(n: u32) -> Vec<Caption> {
    (0..n)
        .map(|i| Caption {
            window: FrameWindow {
                start_frame: i * 4,
                end_frame: i * 4 + 4,
                fps: 1,
            },
            text: format!("segment {i}: a man holds a cup"),
            question_guided: true,
            keywords_used: extract_keywords("", &[]),
        })
        .collect()
}

pub fn graphs() -> Vec<SceneGraph> {
    let span = TimeSpan::new(0.0, 4.0).unwrap();
    vec![SceneGraph {
        chunk_index: 0,
        time_span: span,
        triplets: vec![Triplet {
            subject: "man".into(),
            relation: "puts".into(),
            object: "cup".into(),
            time_span: span,
        }],
        prev_chunk: None,
    }]
}

pub fn context(modality: ModalityKind, video_backend: SharedBackend) -> ModalityContext {
    match modality {
        ModalityKind::Text => ModalityContext::Text(CaptionStore::ready(captions(3))),
        ModalityKind::Video => ModalityContext::Video(VideoHandle {
            media: Vec::new(),
            backend: video_backend,
            model_id: "vlm".into(),
        }),
        ModalityKind::Graph => ModalityContext::Graph(GraphStore::ready(graphs())),
    }
}

pub fn vlm() -> SharedBackend {
    Arc::new(Responder(|_: &ChatRequest| {
        Ok(ModelTurnWire::text("the man puts the cup down"))
    }))
}

pub fn session(question: &QuestionRecord, modality: ModalityKind, backend: SharedBackend) -> AgentSession {
    AgentSession::new(
        AgentConfig::new(modality),
        question.clone(),
        context(modality, vlm()),
        backend,
    )
    .unwrap()
}

/// One session per modality, in Text, Video, Graph order.
pub fn sessions(question: &QuestionRecord, backends: [SharedBackend; 3]) -> Vec<AgentSession> {
    ModalityKind::ALL
        .into_iter()
        .zip(backends)
        .map(|(m, b)| session(question, m, b))
        .collect()
}

/// Backends that each answer `letters[i]` after one tool call.
pub fn answering(letters: [char; 3]) -> [SharedBackend; 3] {
    let tools = [caption_call(), video_call("what happens?"), graph_call("cup")];
    let mut out: Vec<SharedBackend> = Vec::new();
    for (tool, letter) in tools.into_iter().zip(letters) {
        out.push(Script::new([tool, answer(letter)]));
    }
    out.try_into().ok().unwrap()
}

/// Organizer stand-in that backs the option with the most timestamped
/// evidence lines across all reports in its prompt.
pub fn evidence_weigher() -> SharedBackend {
    Arc::new(Responder(|request: &ChatRequest| {
        let prompt = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == vma_core::backend::Role::User)
            .map(|m| m.content.clone())
            .unwrap_or_default();
        let mut weights = std::collections::BTreeMap::<char, u32>::new();
        let mut current = None;
        for line in prompt.lines() {
            if let Some(pos) = line.find("] chose (") {
                let letter = line[pos + 9..].chars().next();
                current = letter;
                if let Some(l) = letter {
                    weights.entry(l).or_default();
                }
            } else if line.starts_with("- [") && line.contains("s-") {
                if let Some(l) = current {
                    *weights.entry(l).or_default() += 1;
                }
            }
        }
        let best = weights
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(l, _)| *l)
            .unwrap_or('A');
        Ok(ModelTurnWire::text(format!(
            "The evidence favours this option.\nAnswer: {best}"
        )))
    }))
}

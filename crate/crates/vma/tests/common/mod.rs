#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};
use vma::config::RunConfig;
use vma::mock::ScriptedBackend;
use vma_core::agents::{AgentConfig, AgentSession, CaptionStore, GraphStore, ModalityContext, VideoHandle};
use vma_core::backend::{ModelTurnWire, SharedBackend};
use vma_core::captioning::{extract_keywords, Caption, FrameWindow};
use vma_core::scenegraph::{SceneGraph, Triplet};
use vma_core::types::{CategoryCode, ModalityKind, QuestionRecord, TimeSpan};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The bundled replay fixture's config, writing into `output_dir`.
pub fn replay_config(output_dir: &Path) -> RunConfig {
    let mut config = RunConfig::load(&fixture_dir().join("replay/run.toml")).unwrap();
    config.output_dir = output_dir.to_path_buf();
    config
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

fn captions() -> Vec<Caption> {
    (0..3)
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

fn graphs() -> Vec<SceneGraph> {
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

/// The conflict case: Text and Graph back D with timestamped evidence,
/// Video backs B with none.
pub fn conflict_sessions(q: &QuestionRecord) -> Vec<AgentSession> {
    let text = ScriptedBackend::new()
        .then(ModelTurnWire::tool_call("caption_analysis", &json!({})))
        .then(answer_with(
            'D',
            "captions show the cup placed down",
            &[
                (4.0, 8.0, "the man sets the cup on the table"),
                (8.0, 12.0, "the cup rests on the table"),
            ],
        ));
    let video = ScriptedBackend::new().then(answer_with('B', "looks like a throwing motion", &[]));
    let graph = ScriptedBackend::new()
        .then(ModelTurnWire::tool_call(
            "scene_graph_query",
            &json!({"kind": "entity", "label": "cup"}),
        ))
        .then(answer_with(
            'D',
            "(man, puts, cup) follows the pickup",
            &[(0.0, 4.0, "(man, puts, cup)")],
        ));
    let unused_vlm: SharedBackend = Arc::new(ScriptedBackend::new());
    let contexts = [
        ModalityContext::Text(CaptionStore::ready(captions())),
        ModalityContext::Video(VideoHandle {
            media: Vec::new(),
            backend: unused_vlm,
            model_id: "vlm".into(),
        }),
        ModalityContext::Graph(GraphStore::ready(graphs())),
    ];
    let backends: [SharedBackend; 3] = [Arc::new(text), Arc::new(video), Arc::new(graph)];
    ModalityKind::ALL
        .into_iter()
        .zip(contexts)
        .zip(backends)
        .map(|((m, c), b)| AgentSession::new(AgentConfig::new(m), q.clone(), c, b).unwrap())
        .collect()
}

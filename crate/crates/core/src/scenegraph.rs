//! Temporal scene graphs built from caption chunks, and the queries the
//! graph agent runs against them.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, Message, ModelBackend, ModelTurnWire};
use crate::captioning::{tokenize, Caption};
use crate::types::TimeSpan;

pub const DEFAULT_CHUNK_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub time_span: TimeSpan,
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub chunk_index: usize,
    pub time_span: TimeSpan,
    pub triplets: Vec<Triplet>,
    pub prev_chunk: Option<usize>,
}

/// Contiguous caption-index ranges partitioning `[0, caption_count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan(Vec<Range<usize>>);

impl ChunkPlan {
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).collect()
}

/// Jaccard similarity of the lowercase token sets; two empty texts count as identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (token_set(a), token_set(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Greedy left-to-right grouping: a caption joins the open chunk while its
/// similarity to that chunk's first caption stays at or above `threshold`.
pub fn chunk_by_similarity(captions: &[Caption], threshold: f64) -> ChunkPlan {
    let mut ranges = Vec::new();
    let mut anchor = 0usize;
    for i in 1..captions.len() {
        if jaccard(&captions[anchor].text, &captions[i].text) < threshold {
            ranges.push(anchor..i);
            anchor = i;
        }
    }
    if !captions.is_empty() {
        ranges.push(anchor..captions.len());
    }
    ChunkPlan(ranges)
}

/// Header introducing the previous chunk's triplets in a graph prompt.
pub const CONTINUITY_HEADER: &str = "Scene graph of the previous segment (keep entity names consistent with it):";

pub const GRAPH_SYSTEM_PROMPT: &str = "You build scene graphs from video captions. \
Nodes are objects, people, or other key entities; edges are their relationships and actions.";

pub fn build_graph_prompt(chunk_captions: &[Caption], prev: Option<&SceneGraph>) -> String {
    let mut prompt = String::from("Captions for this segment of the video:\n");
    for caption in chunk_captions {
        prompt.push_str(&format!("[{}] {}\n", caption.time_span(), caption.text));
    }
    if let Some(prev) = prev {
        prompt.push('\n');
        prompt.push_str(CONTINUITY_HEADER);
        prompt.push('\n');
        prompt.push_str(&serialize_triplets(&prev.triplets));
        prompt.push('\n');
    }
    prompt.push_str(
        "\nList the relationship triplets for this segment. Write exactly one triplet per line \
in the form (subject, relation, object) and nothing else.\n",
    );
    prompt
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed triplet on line {line_number}: `{content}`")]
pub struct MalformedTriplet {
    pub line_number: usize,
    pub content: String,
}

fn parse_line(line: &str) -> Option<[&str; 3]> {
    let inner = line.strip_prefix('(')?.strip_suffix(')')?;
    let mut fields = inner.split(',').map(str::trim);
    let parsed = [fields.next()?, fields.next()?, fields.next()?];
    if fields.next().is_some() || parsed.iter().any(|f| f.is_empty()) {
        return None;
    }
    Some(parsed)
}

/// Parses one `(subject, relation, object)` per line. Blank lines are skipped;
/// anything else is an error. Every triplet gets `chunk_span`.
pub fn parse_triplets(model_output: &str, chunk_span: TimeSpan) -> Result<Vec<Triplet>, MalformedTriplet> {
    let mut triplets = Vec::new();
    for (i, raw) in model_output.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let [subject, relation, object] = parse_line(line).ok_or_else(|| MalformedTriplet {
            line_number: i + 1,
            content: raw.to_string(),
        })?;
        triplets.push(Triplet {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
            time_span: chunk_span,
        });
    }
    Ok(triplets)
}

pub fn serialize_triplets(triplets: &[Triplet]) -> String {
    let lines: Vec<String> = triplets.iter().map(|t| t.to_string()).collect();
    lines.join("\n")
}

pub fn triplets_in_range(graphs: &[SceneGraph], query: TimeSpan) -> Vec<Triplet> {
    graphs
        .iter()
        .flat_map(|g| g.triplets.iter())
        .filter(|t| t.time_span.intersects(&query))
        .cloned()
        .collect()
}

pub fn triplets_with_entity(graphs: &[SceneGraph], label: &str) -> Vec<Triplet> {
    let needle = label.trim().to_lowercase();
    graphs
        .iter()
        .flat_map(|g| g.triplets.iter())
        .filter(|t| t.subject.to_lowercase() == needle || t.object.to_lowercase() == needle)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSettings {
    pub model_id: String,
    pub threshold: f64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        GraphSettings {
            model_id: "scene-graph".to_string(),
            threshold: DEFAULT_CHUNK_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("no captions to build scene graphs from")]
    NoCaptions,
    #[error("scene graph for chunk {chunk} failed: {source}")]
    Backend { chunk: usize, source: BackendError },
    #[error("scene graph for chunk {chunk}: {source}")]
    Malformed { chunk: usize, source: MalformedTriplet },
}

/// Builds one graph per chunk, each prompt carrying the previous chunk's graph.
pub fn build_scene_graphs(
    captions: &[Caption],
    backend: &dyn ModelBackend,
    settings: &GraphSettings,
) -> Result<Vec<SceneGraph>, GraphError> {
    if captions.is_empty() {
        return Err(GraphError::NoCaptions);
    }
    let plan = chunk_by_similarity(captions, settings.threshold);
    let mut graphs: Vec<SceneGraph> = Vec::with_capacity(plan.len());
    for (chunk, range) in plan.ranges().iter().enumerate() {
        let members = &captions[range.clone()];
        let span = members
            .iter()
            .map(Caption::time_span)
            .reduce(|a, b| a.union(&b))
            .expect("chunks are non-empty");
        let prompt = build_graph_prompt(members, graphs.last());
        let request = ChatRequest::new(
            settings.model_id.clone(),
            alloc::vec![Message::system(GRAPH_SYSTEM_PROMPT), Message::user(prompt)],
        );
        let output = match backend.complete(&request) {
            Ok(ModelTurnWire::Text { content }) => content,
            Ok(ModelTurnWire::ToolCall { name, .. }) => {
                return Err(GraphError::Backend {
                    chunk,
                    source: BackendError::UnexpectedTurn(format!("tool call `{name}`")),
                })
            }
            Err(source) => return Err(GraphError::Backend { chunk, source }),
        };
        let triplets = parse_triplets(&output, span).map_err(|source| GraphError::Malformed { chunk, source })?;
        graphs.push(SceneGraph {
            chunk_index: chunk,
            time_span: span,
            triplets,
            prev_chunk: chunk.checked_sub(1),
        });
    }
    Ok(graphs)
}

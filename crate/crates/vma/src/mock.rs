//! Offline backends: a scripted mock and a deterministic simulated model.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde_json::{json, Value};
use vma_core::agents::VIDEO_TOOL_SYSTEM_PROMPT;
use vma_core::backend::{request_key, BackendError, ChatRequest, ModelBackend, ModelTurnWire, Role};
use vma_core::captioning::{is_stopword, tokenize, CAPTIONER_SYSTEM_PROMPT, KEYWORD_BLOCK_HEADER};
use vma_core::digest::sha256_hex;
use vma_core::organizer::{FINAL_ANSWER_TOOL, ORGANIZER_SYSTEM_PROMPT};
use vma_core::scenegraph::{CONTINUITY_HEADER, GRAPH_SYSTEM_PROMPT};
use vma_core::topology::{ASK_AGENT_TOOL, STAR_SYSTEM_PROMPT};
use vma_core::types::{letter_index, option_letter, ModalityKind};

/// Answers by request key first, then from a queue in call order.
#[derive(Default)]
pub struct ScriptedBackend {
    by_key: BTreeMap<String, ModelTurnWire>,
    queue: Mutex<VecDeque<ModelTurnWire>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reply with `turn` whenever a request hashes to `key`.
    pub fn on_key(mut self, key: impl Into<String>, turn: ModelTurnWire) -> Self {
        self.by_key.insert(key.into(), turn);
        self
    }

    pub fn on_request(self, request: &ChatRequest, turn: ModelTurnWire) -> Self {
        self.on_key(request_key(request), turn)
    }

    pub fn then(self, turn: ModelTurnWire) -> Self {
        self.queue.lock().unwrap().push_back(turn);
        self
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        let key = request_key(request);
        if let Some(turn) = self.by_key.get(&key) {
            return Ok(turn.clone());
        }
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(BackendError::CassetteMiss { key })
    }
}

/// A stand-in for every model role, driven only by the request content and
/// a seed. Agents answer correctly with a per-modality probability when the
/// question appears in the answer key.
#[derive(Debug, Clone)]
pub struct SimulatedModel {
    seed: u64,
    answer_key: BTreeMap<String, usize>,
    accuracy: BTreeMap<ModalityKind, f64>,
}

impl SimulatedModel {
    pub fn new(seed: u64) -> Self {
        SimulatedModel {
            seed,
            answer_key: BTreeMap::new(),
            accuracy: [
                (ModalityKind::Text, 0.77),
                (ModalityKind::Video, 0.776),
                (ModalityKind::Graph, 0.729),
            ]
            .into(),
        }
    }

    /// Gold option per question text.
    pub fn with_answers(mut self, answers: impl IntoIterator<Item = (String, usize)>) -> Self {
        self.answer_key.extend(answers);
        self
    }

    pub fn with_accuracy(mut self, modality: ModalityKind, p: f64) -> Self {
        self.accuracy.insert(modality, p);
        self
    }

    /// Uniform draw in [0, 1) keyed by the seed and `parts`.
    fn draw(&self, parts: &[&str]) -> f64 {
        let mut material = self.seed.to_string();
        for p in parts {
            material.push('\u{1f}');
            material.push_str(p);
        }
        let hex = sha256_hex(material.as_bytes());
        let n = u64::from_str_radix(&hex[..13], 16).expect("hex digest");
        n as f64 / (1u64 << 52) as f64
    }

    fn pick(&self, parts: &[&str], n: usize) -> usize {
        ((self.draw(parts) * n as f64) as usize).min(n.saturating_sub(1))
    }

    fn caption(&self, request: &ChatRequest) -> ModelTurnWire {
        let prompt = last_user(request);
        let digests: Vec<&str> = request
            .messages
            .iter()
            .flat_map(|m| m.media.iter().flatten())
            .map(|m| m.digest.as_str())
            .collect();
        let scene = digests.join(",");
        let actions = [
            "walks across the room",
            "picks something up",
            "sits down",
            "talks to someone",
            "puts something away",
        ];
        let action = actions[self.pick(&["caption", &scene], actions.len())];
        let mut text = format!("A person {action}.");
        if let Some(block) = prompt.split(KEYWORD_BLOCK_HEADER).nth(1) {
            let words: Vec<&str> = block
                .lines()
                .next()
                .unwrap_or("")
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|w| !w.is_empty())
                .take(3)
                .collect();
            if !words.is_empty() {
                text.push_str(&format!(" The {} is visible.", words.join(" and the ")));
            }
        }
        ModelTurnWire::text(text)
    }

    fn scene_graph(&self, request: &ChatRequest) -> ModelTurnWire {
        let prompt = last_user(request);
        let current = prompt.split(CONTINUITY_HEADER).next().unwrap_or("");
        let mut nouns: Vec<String> = Vec::new();
        for token in tokenize(current) {
            if token.len() > 3 && !is_stopword(&token) && !nouns.contains(&token) && token != "person" {
                nouns.push(token);
            }
        }
        let relations = ["holds", "near", "looks at"];
        let lines: Vec<String> = nouns
            .iter()
            .take(3)
            .enumerate()
            .map(|(i, n)| format!("(person, {}, {n})", relations[i % relations.len()]))
            .collect();
        if lines.is_empty() {
            return ModelTurnWire::text("(person, in, room)");
        }
        ModelTurnWire::text(lines.join("\n"))
    }

    fn vlm(&self, request: &ChatRequest) -> ModelTurnWire {
        let query = last_user(request);
        let frames = request.messages.iter().flat_map(|m| m.media.iter().flatten()).count();
        let moods = ["calmly", "quickly", "carefully"];
        let how = moods[self.pick(&["vlm", &query], moods.len())];
        ModelTurnWire::text(format!(
            "Across {frames} frames the person acts {how}; regarding \"{}\", the main action happens mid-video.",
            query.trim()
        ))
    }

    fn agent(&self, request: &ChatRequest, modality: ModalityKind) -> ModelTurnWire {
        let opening = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let (question, options) = parse_question(opening);
        let last = request.messages.last();
        let tool_ran = request.messages.iter().any(|m| m.role == Role::Tool);
        let forced = !request.has_tool(vma_core::agents::tool_name(modality));
        let wants_tool = !forced && !tool_ran && last.is_some_and(|m| m.role == Role::User);
        if wants_tool && !options.is_empty() {
            let args = match modality {
                ModalityKind::Text => json!({}),
                ModalityKind::Video => json!({ "query": question }),
                ModalityKind::Graph => json!({"kind": "range", "start": 0.0, "end": 100000.0}),
            };
            return ModelTurnWire::tool_call(vma_core::agents::tool_name(modality), &args);
        }
        if options.is_empty() {
            return ModelTurnWire::text("I cannot find the question.");
        }

        let n = options.len();
        let correct = self.draw(&["agent", modality.as_str(), &question]) < self.accuracy[&modality];
        let choice = match self.answer_key.get(&question) {
            Some(&gold) if gold < n && correct => gold,
            Some(&gold) if gold < n && n > 1 => {
                let k = self.pick(&["wrong", modality.as_str(), &question], n - 1);
                if k >= gold {
                    k + 1
                } else {
                    k
                }
            }
            _ => self.pick(&["guess", modality.as_str(), &question], n),
        };

        let kind = match modality {
            ModalityKind::Text => "caption_ref",
            ModalityKind::Video => "video_observation",
            ModalityKind::Graph => "triplet",
        };
        let latest_tool = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Tool && !m.content.starts_with("error"))
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let evidence: Vec<Value> = latest_tool
            .lines()
            .filter(|l| !l.trim().is_empty())
            .take(2)
            .map(|line| {
                let mut item = json!({"kind": kind, "content": line.trim()});
                if let Some((s, e)) = find_span(line) {
                    item["start"] = json!(s);
                    item["end"] = json!(e);
                }
                item
            })
            .collect();
        ModelTurnWire::tool_call(
            FINAL_ANSWER_TOOL,
            &json!({
                "option": option_letter(choice).to_string(),
                "rationale": format!("The {} evidence best supports \"{}\".", modality.as_str(), options[choice]),
                "evidence": evidence,
            }),
        )
    }

    fn organizer(&self, request: &ChatRequest) -> ModelTurnWire {
        let material: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| matches!(m.role, Role::User | Role::Tool))
            .map(|m| m.content.as_str())
            .collect();
        let choice = weigh_evidence(&material.join("\n"));
        ModelTurnWire::text(format!(
            "Weighing the agents' evidence, option {choice} has the strongest support.\nAnswer: {choice}"
        ))
    }

    fn star(&self, request: &ChatRequest) -> ModelTurnWire {
        let opening = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let asked: Vec<String> = request
            .messages
            .iter()
            .filter_map(|m| m.tool_call.as_ref())
            .filter(|c| c.name == ASK_AGENT_TOOL)
            .filter_map(|c| serde_json::from_str::<Value>(&c.arguments).ok())
            .filter_map(|v| v.get("agent").and_then(Value::as_str).map(str::to_string))
            .collect();
        if request.has_tool(ASK_AGENT_TOOL) {
            let seeded = opening.contains("] chose (");
            let next = if seeded {
                // One follow-up with the agent that gave the least support, only when the reports disagree.
                let votes = report_choices(opening);
                let disagree = votes.iter().any(|(_, c, _)| *c != votes[0].1);
                votes
                    .iter()
                    .min_by_key(|(_, _, ev)| *ev)
                    .filter(|_| disagree && asked.is_empty())
                    .map(|(m, _, _)| m.as_str().to_string())
            } else {
                ModalityKind::ALL
                    .into_iter()
                    .map(|m| m.as_str().to_string())
                    .find(|m| !asked.contains(m))
            };
            if let Some(agent) = next {
                return ModelTurnWire::tool_call(
                    ASK_AGENT_TOOL,
                    &json!({"agent": agent, "message": "Check the question again and report your answer with timestamped evidence."}),
                );
            }
        }
        self.organizer(request)
    }
}

impl ModelBackend for SimulatedModel {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        request.validate()?;
        let system = request.system_prompt().unwrap_or("");
        if system == CAPTIONER_SYSTEM_PROMPT {
            return Ok(self.caption(request));
        }
        if system == GRAPH_SYSTEM_PROMPT {
            return Ok(self.scene_graph(request));
        }
        if system == VIDEO_TOOL_SYSTEM_PROMPT {
            return Ok(self.vlm(request));
        }
        if system == ORGANIZER_SYSTEM_PROMPT {
            return Ok(self.organizer(request));
        }
        if system == STAR_SYSTEM_PROMPT || request.has_tool(ASK_AGENT_TOOL) {
            return Ok(self.star(request));
        }
        if let Some(m) = ModalityKind::ALL.into_iter().find(|m| system.contains(m.agent_name())) {
            return Ok(self.agent(request, m));
        }
        Err(BackendError::UnexpectedTurn(
            "simulated model does not recognise this request".into(),
        ))
    }
}

fn last_user(request: &ChatRequest) -> String {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.clone())
        .unwrap_or_default()
}

/// Question text and option texts from a rendered question block.
fn parse_question(text: &str) -> (String, Vec<String>) {
    let mut question = String::new();
    let mut options = Vec::new();
    for line in text.lines() {
        if let Some(q) = line.strip_prefix("Question: ") {
            question = q.trim().to_string();
        } else if let Some((label, rest)) = line.split_once(". ") {
            let mut chars = label.chars();
            if let (Some(c), None) = (chars.next(), chars.next()) {
                if letter_index(c) == Some(options.len()) {
                    options.push(rest.trim().to_string());
                }
            }
        }
    }
    (question, options)
}

/// First `12.0s-16.0s` style span on a line.
fn find_span(line: &str) -> Option<(f64, f64)> {
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() && (i == 0 || !bytes[i - 1].is_ascii_digit() && bytes[i - 1] != b'.') {
            let rest = &line[i..];
            if let Some((a, tail)) = rest.split_once("s-") {
                if let Some((b, _)) = tail.split_once('s') {
                    if let (Ok(s), Ok(e)) = (a.parse::<f64>(), b.parse::<f64>()) {
                        return Some((s, e));
                    }
                }
            }
        }
        i += 1;
    }
    None
}

/// (modality, chosen letter, timestamped evidence lines) for each rendered report.
fn report_choices(text: &str) -> Vec<(ModalityKind, char, usize)> {
    let mut out: Vec<(ModalityKind, char, usize)> = Vec::new();
    for line in text.lines() {
        if let Some(pos) = line.find("] chose (") {
            let name = line[..pos].trim_start_matches('[');
            let letter = line[pos + 9..].chars().next().unwrap_or('?');
            if let Some(m) = ModalityKind::ALL.into_iter().find(|m| m.agent_name() == name) {
                out.push((m, letter, 0));
            }
        } else if line.starts_with("- [") && find_span(line).is_some() {
            if let Some(last) = out.last_mut() {
                last.2 += 1;
            }
        }
    }
    out
}

/// Letter with the most votes plus timestamped evidence; ties go to the
/// option that appeared first.
fn weigh_evidence(text: &str) -> char {
    let mut order: Vec<char> = Vec::new();
    let mut score: BTreeMap<char, usize> = BTreeMap::new();
    for (_, letter, evidence) in report_choices(text) {
        if !order.contains(&letter) {
            order.push(letter);
        }
        *score.entry(letter).or_default() += 1 + evidence;
    }
    let best = score.values().copied().max().unwrap_or(0);
    order.into_iter().find(|l| score[l] == best).unwrap_or('A')
}

#[cfg(test)]
mod tests {
    use super::*;
    use vma_core::backend::Message;

    #[test]
    fn spans_are_found() {
        assert_eq!(find_span("[segment 2 | 8.0s-12.0s] text"), Some((8.0, 12.0)));
        assert_eq!(find_span("- [triplet 0.0s-4.0s] (a, b, c)"), Some((0.0, 4.0)));
        assert_eq!(find_span("no span here"), None);
    }

    #[test]
    fn weighing_prefers_supported_option() {
        let text = "[Video Analysis Agent] chose (B) throw it\nRationale: x\n\
                    [Text Analysis Agent] chose (D) table\nRationale: y\nEvidence:\n- [caption 4.0s-8.0s] cup down\n";
        assert_eq!(weigh_evidence(text), 'D');
        let tie = "[Video Analysis Agent] chose (B) x\n[Text Analysis Agent] chose (D) y\n";
        assert_eq!(weigh_evidence(tie), 'B');
    }

    #[test]
    fn question_block_parses() {
        let (q, opts) = parse_question("Question: Why?\nOptions:\nA. one\nB. two\n\nUse it.");
        assert_eq!(q, "Why?");
        assert_eq!(opts, ["one", "two"]);
    }

    #[test]
    fn scripted_lookup_and_miss() {
        let req = ChatRequest::new("m", vec![Message::user("hi")]);
        let backend = ScriptedBackend::new().on_request(&req, ModelTurnWire::text("A"));
        assert_eq!(backend.complete(&req).unwrap(), ModelTurnWire::text("A"));
        let other = ChatRequest::new("m", vec![Message::user("bye")]);
        assert!(matches!(
            backend.complete(&other),
            Err(BackendError::CassetteMiss { .. })
        ));
    }

    #[test]
    fn simulation_is_seeded() {
        let a = SimulatedModel::new(1);
        let b = SimulatedModel::new(2);
        let draws_a: Vec<f64> = (0..8).map(|i| a.draw(&[&i.to_string()])).collect();
        let draws_b: Vec<f64> = (0..8).map(|i| b.draw(&[&i.to_string()])).collect();
        assert_eq!(draws_a, (0..8).map(|i| a.draw(&[&i.to_string()])).collect::<Vec<_>>());
        assert_ne!(draws_a, draws_b);
        assert!(draws_a.iter().all(|d| (0.0..1.0).contains(d)));
    }
}

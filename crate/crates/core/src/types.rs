//! Domain types shared by every stage of a run.
//!
//! Everything here is a plain value type. Option indices are 0-based; letter
//! labels (`A`, `B`, ...) only appear at the edges (prompts and dataset files).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

/// NExT-QA question taxonomy, plus `Other` for datasets without it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CategoryCode {
    #[serde(rename = "CH")]
    CausalHow,
    #[serde(rename = "CW")]
    CausalWhy,
    #[serde(rename = "DC")]
    DescriptiveCount,
    #[serde(rename = "DL")]
    DescriptiveLocation,
    #[serde(rename = "DO")]
    DescriptiveOther,
    #[serde(rename = "TC")]
    TemporalCoOccurrence,
    #[serde(rename = "TN")]
    TemporalPreviousNext,
    #[serde(rename = "TP")]
    TemporalPresent,
    #[serde(rename = "OTHER")]
    Other,
}

impl CategoryCode {
    /// The eight NExT-QA codes, in table column order.
    pub const NEXT_QA: [CategoryCode; 8] = [
        CategoryCode::CausalHow,
        CategoryCode::CausalWhy,
        CategoryCode::DescriptiveCount,
        CategoryCode::DescriptiveLocation,
        CategoryCode::DescriptiveOther,
        CategoryCode::TemporalCoOccurrence,
        CategoryCode::TemporalPreviousNext,
        CategoryCode::TemporalPresent,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CategoryCode::CausalHow => "CH",
            CategoryCode::CausalWhy => "CW",
            CategoryCode::DescriptiveCount => "DC",
            CategoryCode::DescriptiveLocation => "DL",
            CategoryCode::DescriptiveOther => "DO",
            CategoryCode::TemporalCoOccurrence => "TC",
            CategoryCode::TemporalPreviousNext => "TN",
            CategoryCode::TemporalPresent => "TP",
            CategoryCode::Other => "OTHER",
        }
    }
}

impl fmt::Display for CategoryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown category code `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for CategoryCode {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        CategoryCode::NEXT_QA
            .iter()
            .copied()
            .chain(core::iter::once(CategoryCode::Other))
            .find(|c| c.code() == upper)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

/// The evidence channel a specialized agent is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Text,
    Video,
    Graph,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 3] = [ModalityKind::Text, ModalityKind::Video, ModalityKind::Graph];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityKind::Text => "text",
            ModalityKind::Video => "video",
            ModalityKind::Graph => "graph",
        }
    }

    /// Human-facing agent name used in prompts.
    pub fn agent_name(self) -> &'static str {
        match self {
            ModalityKind::Text => "Text Analysis Agent",
            ModalityKind::Video => "Video Analysis Agent",
            ModalityKind::Graph => "Graph Analysis Agent",
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(ModalityKind::Text),
            "video" => Ok(ModalityKind::Video),
            "graph" => Ok(ModalityKind::Graph),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Letter label for a 0-based option index (`0 -> 'A'`).
pub fn option_letter(index: usize) -> char {
    debug_assert!(index < 26);
    (b'A' + index as u8) as char
}

/// 0-based index for a letter label, case-insensitive.
pub fn letter_index(letter: char) -> Option<usize> {
    let upper = letter.to_ascii_uppercase();
    upper.is_ascii_uppercase().then(|| (upper as u8 - b'A') as usize)
}

/// A closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct TimeSpan {
    start: f64,
    end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("invalid time span [{start}, {end}]")]
pub struct InvalidSpan {
    pub start: f64,
    pub end: f64,
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Result<Self, InvalidSpan> {
        if start.is_finite() && end.is_finite() && start >= 0.0 && start <= end {
            Ok(TimeSpan { start, end })
        } else {
            Err(InvalidSpan { start, end })
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn intersects(&self, other: &TimeSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &TimeSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Smallest span covering both.
    pub fn union(&self, other: &TimeSpan) -> TimeSpan {
        TimeSpan {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

impl From<TimeSpan> for [f64; 2] {
    fn from(span: TimeSpan) -> Self {
        [span.start, span.end]
    }
}

impl TryFrom<[f64; 2]> for TimeSpan {
    type Error = InvalidSpan;

    fn try_from(value: [f64; 2]) -> Result<Self, Self::Error> {
        TimeSpan::new(value[0], value[1])
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}s-{:.1}s", self.start, self.end)
    }
}

/// One multiple-choice video question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub video_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold: Option<usize>,
    pub category: CategoryCode,
}

impl QuestionRecord {
    /// Question text followed by lettered options, one per line.
    pub fn render(&self) -> String {
        let mut out = format!("Question: {}\nOptions:\n", self.question);
        for (i, option) in self.options.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", option_letter(i), option));
        }
        out
    }

    pub fn is_valid_option(&self, index: usize) -> bool {
        index < self.options.len()
    }
}

/// A question as read from a dataset, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawQuestion {
    pub id: String,
    pub video_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold: Option<usize>,
    pub category: Option<CategoryCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("need at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("options {first} and {second} are identical after normalization")]
    DuplicateOptions { first: usize, second: usize },
    #[error("option {0} is empty")]
    EmptyOption(usize),
    #[error("gold index {gold} out of range for {options} options")]
    GoldOutOfRange { gold: usize, options: usize },
    #[error("more than 26 options are not supported")]
    TooManyOptions,
}

/// Trim and collapse internal whitespace runs to a single space.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Validates a raw record and normalizes whitespace in its texts.
pub fn normalize_question(raw: RawQuestion) -> Result<QuestionRecord, QuestionError> {
    let question = normalize_whitespace(&raw.question);
    if question.is_empty() {
        return Err(QuestionError::EmptyQuestion);
    }
    if raw.options.len() < 2 {
        return Err(QuestionError::TooFewOptions(raw.options.len()));
    }
    if raw.options.len() > 26 {
        return Err(QuestionError::TooManyOptions);
    }
    let options: Vec<String> = raw.options.iter().map(|o| normalize_whitespace(o)).collect();
    for (i, option) in options.iter().enumerate() {
        if option.is_empty() {
            return Err(QuestionError::EmptyOption(i));
        }
        if let Some(first) = options[..i].iter().position(|o| o == option) {
            return Err(QuestionError::DuplicateOptions { first, second: i });
        }
    }
    if let Some(gold) = raw.gold {
        if gold >= options.len() {
            return Err(QuestionError::GoldOutOfRange {
                gold,
                options: options.len(),
            });
        }
    }
    Ok(QuestionRecord {
        id: raw.id,
        video_id: raw.video_id,
        question,
        options,
        gold: raw.gold,
        category: raw.category.unwrap_or(CategoryCode::Other),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    CaptionRef,
    Triplet,
    VideoObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub kind: EvidenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_span: Option<TimeSpan>,
    pub content: String,
}

impl fmt::Display for EvidenceItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            EvidenceKind::CaptionRef => "caption",
            EvidenceKind::Triplet => "triplet",
            EvidenceKind::VideoObservation => "video",
        };
        match &self.time_span {
            Some(span) => write!(f, "[{kind} {span}] {}", self.content),
            None => write!(f, "[{kind}] {}", self.content),
        }
    }
}

/// A modality agent's answer with its supporting material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub modality: ModalityKind,
    pub chosen: usize,
    pub rationale: String,
    pub evidence: Vec<EvidenceItem>,
    pub tool_calls_used: u32,
}

impl AgentReport {
    /// Text the organizer (and, in debates, later agents) sees.
    pub fn render(&self, question: &QuestionRecord) -> String {
        let option_text = question.options.get(self.chosen).map(String::as_str).unwrap_or("?");
        let mut out = format!(
            "[{}] chose ({}) {}\nRationale: {}\n",
            self.modality.agent_name(),
            option_letter(self.chosen),
            option_text,
            self.rationale
        );
        if !self.evidence.is_empty() {
            out.push_str("Evidence:\n");
            for item in &self.evidence {
                out.push_str(&format!("- {item}\n"));
            }
        }
        out
    }
}

/// Final answer for a question plus the path that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(rename = "final")]
    pub final_option: usize,
    pub justification: String,
    pub reports: Vec<AgentReport>,
    pub policy_id: String,
}

/// A participant in an orchestration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Participant {
    Organizer,
    Agent(ModalityKind),
}

impl Participant {
    pub fn as_str(self) -> &'static str {
        match self {
            Participant::Organizer => "organizer",
            Participant::Agent(m) => m.as_str(),
        }
    }

    pub fn agent(self) -> Option<ModalityKind> {
        match self {
            Participant::Agent(m) => Some(m),
            Participant::Organizer => None,
        }
    }
}

impl From<Participant> for String {
    fn from(p: Participant) -> Self {
        p.as_str().to_string()
    }
}

impl TryFrom<String> for Participant {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if value == "organizer" {
            Ok(Participant::Organizer)
        } else {
            value.parse().map(Participant::Agent)
        }
    }
}

impl fmt::Display for Participant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Assign,
    ToolCall,
    ToolResult,
    AgentMessage,
    OrganizerMessage,
    Report,
    /// An agent run that ended in an error instead of a report.
    AgentFailure,
    Verdict,
}

/// One message in an orchestration run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub phase: Phase,
    pub sender: Participant,
    pub recipients: BTreeSet<Participant>,
    pub visible_to: BTreeSet<Participant>,
    pub payload_digest: String,
    pub payload: String,
}

/// A trace event before the sequencer assigns it a number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingEvent {
    pub phase: Phase,
    pub sender: Participant,
    pub recipients: BTreeSet<Participant>,
    pub visible_to: BTreeSet<Participant>,
    pub payload: String,
}

impl PendingEvent {
    /// `visible_to` is widened to include the sender and every recipient.
    pub fn new(
        phase: Phase,
        sender: Participant,
        recipients: impl IntoIterator<Item = Participant>,
        payload: impl Into<String>,
    ) -> Self {
        let recipients: BTreeSet<_> = recipients.into_iter().collect();
        let mut visible_to = recipients.clone();
        visible_to.insert(sender);
        PendingEvent {
            phase,
            sender,
            recipients,
            visible_to,
            payload: payload.into(),
        }
    }

    pub fn also_visible_to(mut self, extra: impl IntoIterator<Item = Participant>) -> Self {
        self.visible_to.extend(extra);
        self
    }

    pub fn sequence(self, seq: u64) -> TraceEvent {
        TraceEvent {
            seq,
            phase: self.phase,
            sender: self.sender,
            recipients: self.recipients,
            visible_to: self.visible_to,
            payload_digest: sha256_hex(self.payload.as_bytes()),
            payload: self.payload,
        }
    }
}

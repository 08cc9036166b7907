//! Turning agent reports into a final answer: the model-driven organizer
//! and the deterministic baseline policies.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, Message, ModelBackend, ModelTurnWire, ToolSchema};
use crate::types::{
    letter_index, normalize_whitespace, option_letter, AgentReport, CategoryCode, ModalityKind, QuestionRecord, Verdict,
};

/// Modalities ordered best first; breaks voting ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModalityKind>", into = "Vec<ModalityKind>")]
pub struct ModalityRanking([ModalityKind; 3]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankingError {
    #[error("ranking must list each modality exactly once")]
    NotAPermutation,
    #[error("category table is missing {0}")]
    MissingCategory(CategoryCode),
}

impl ModalityRanking {
    pub fn new(order: [ModalityKind; 3]) -> Result<Self, RankingError> {
        if ModalityKind::ALL.iter().all(|m| order.contains(m)) {
            Ok(ModalityRanking(order))
        } else {
            Err(RankingError::NotAPermutation)
        }
    }

    /// 0 is best.
    pub fn position(&self, modality: ModalityKind) -> usize {
        self.0
            .iter()
            .position(|m| *m == modality)
            .expect("ranking is a permutation")
    }

    pub fn order(&self) -> &[ModalityKind; 3] {
        &self.0
    }

    /// All six orderings.
    pub fn all() -> Vec<ModalityRanking> {
        use ModalityKind::*;
        [
            [Text, Video, Graph],
            [Text, Graph, Video],
            [Video, Text, Graph],
            [Video, Graph, Text],
            [Graph, Text, Video],
            [Graph, Video, Text],
        ]
        .into_iter()
        .map(ModalityRanking)
        .collect()
    }
}

/// Video > Text > Graph, by single-agent overall accuracy on NExT-QA
/// (77.6 / 77.0 / 72.9).
impl Default for ModalityRanking {
    fn default() -> Self {
        ModalityRanking([ModalityKind::Video, ModalityKind::Text, ModalityKind::Graph])
    }
}

impl TryFrom<Vec<ModalityKind>> for ModalityRanking {
    type Error = RankingError;

    fn try_from(value: Vec<ModalityKind>) -> Result<Self, Self::Error> {
        let order: [ModalityKind; 3] = value.try_into().map_err(|_| RankingError::NotAPermutation)?;
        ModalityRanking::new(order)
    }
}

impl From<ModalityRanking> for Vec<ModalityKind> {
    fn from(r: ModalityRanking) -> Self {
        r.0.to_vec()
    }
}

/// Which modality to trust for each question category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<CategoryCode, ModalityKind>",
    into = "BTreeMap<CategoryCode, ModalityKind>"
)]
pub struct CategoryTable(BTreeMap<CategoryCode, ModalityKind>);

impl CategoryTable {
    pub fn new(map: BTreeMap<CategoryCode, ModalityKind>) -> Result<Self, RankingError> {
        match CategoryCode::NEXT_QA.iter().find(|c| !map.contains_key(c)) {
            Some(missing) => Err(RankingError::MissingCategory(*missing)),
            None => Ok(CategoryTable(map)),
        }
    }

    pub fn get(&self, category: CategoryCode) -> Option<ModalityKind> {
        self.0.get(&category).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (CategoryCode, ModalityKind)> + '_ {
        self.0.iter().map(|(c, m)| (*c, *m))
    }
}

impl TryFrom<BTreeMap<CategoryCode, ModalityKind>> for CategoryTable {
    type Error = RankingError;

    fn try_from(value: BTreeMap<CategoryCode, ModalityKind>) -> Result<Self, Self::Error> {
        CategoryTable::new(value)
    }
}

impl From<CategoryTable> for BTreeMap<CategoryCode, ModalityKind> {
    fn from(t: CategoryTable) -> Self {
        t.0
    }
}

impl Default for CategoryTable {
    fn default() -> Self {
        default_category_table()
    }
}

/// Best single-agent modality per NExT-QA category, column maxima of the
/// single-agent validation results; the DL tie (Text = Graph) goes to Text
/// by the default ranking.
pub fn default_category_table() -> CategoryTable {
    use CategoryCode::*;
    use ModalityKind::*;
    CategoryTable(
        [
            (CausalHow, Text),
            (CausalWhy, Video),
            (DescriptiveCount, Video),
            (DescriptiveLocation, Text),
            (DescriptiveOther, Video),
            (TemporalCoOccurrence, Text),
            (TemporalPreviousNext, Video),
            (TemporalPresent, Text),
        ]
        .into_iter()
        .collect(),
    )
}

/// How a majority decision was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MajorityRule {
    /// One option had strictly more votes than any other.
    Plurality,
    /// Several options tied; the best-ranked modality among their voters won.
    RankTieBreak,
}

impl MajorityRule {
    pub fn id(self) -> &'static str {
        match self {
            MajorityRule::Plurality => "majority",
            MajorityRule::RankTieBreak => "majority:rank_tie_break",
        }
    }
}

/// Most-voted option; ties go to the answer of the best-ranked modality
/// that voted for one of the tied options. `None` when there are no reports.
pub fn majority_decision(reports: &[AgentReport], ranking: &ModalityRanking) -> Option<(usize, MajorityRule)> {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for r in reports {
        *votes.entry(r.chosen).or_default() += 1;
    }
    let top = *votes.values().max()?;
    let tied: Vec<usize> = votes.iter().filter(|(_, n)| **n == top).map(|(o, _)| *o).collect();
    if let [only] = tied.as_slice() {
        return Some((*only, MajorityRule::Plurality));
    }
    reports
        .iter()
        .filter(|r| tied.contains(&r.chosen))
        .min_by_key(|r| ranking.position(r.modality))
        .map(|r| (r.chosen, MajorityRule::RankTieBreak))
}

/// Panics on an empty report list.
pub fn policy_majority(reports: &[AgentReport], ranking: &ModalityRanking) -> usize {
    majority_decision(reports, ranking).expect("at least one report").0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestCategoryRule {
    /// The table's modality reported.
    Table,
    /// The table's modality had no report; the best-ranked reporter was used.
    RankingFallback,
    /// The category is not in the table; majority vote was used.
    MajorityFallback(MajorityRule),
}

impl BestCategoryRule {
    pub fn id(self) -> String {
        match self {
            BestCategoryRule::Table => "best_category".to_string(),
            BestCategoryRule::RankingFallback => "best_category:ranking_fallback".to_string(),
            BestCategoryRule::MajorityFallback(rule) => format!("best_category:fallback:{}", rule.id()),
        }
    }
}

pub fn best_category_decision(
    category: CategoryCode,
    reports: &[AgentReport],
    table: &CategoryTable,
    ranking: &ModalityRanking,
) -> Option<(usize, BestCategoryRule)> {
    let Some(modality) = table.get(category) else {
        let (option, rule) = majority_decision(reports, ranking)?;
        return Some((option, BestCategoryRule::MajorityFallback(rule)));
    };
    if let Some(r) = reports.iter().find(|r| r.modality == modality) {
        return Some((r.chosen, BestCategoryRule::Table));
    }
    reports
        .iter()
        .min_by_key(|r| ranking.position(r.modality))
        .map(|r| (r.chosen, BestCategoryRule::RankingFallback))
}

/// Panics on an empty report list.
pub fn policy_best_category(
    category: CategoryCode,
    reports: &[AgentReport],
    table: &CategoryTable,
    ranking: &ModalityRanking,
) -> usize {
    best_category_decision(category, reports, table, ranking)
        .expect("at least one report")
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("answer matches no option")]
    Unmatchable,
    #[error("answer matches several options equally well")]
    Ambiguous,
}

fn clean_label(text: &str) -> String {
    let t = text.trim().trim_end_matches(['.', '!']).trim();
    normalize_whitespace(t).to_lowercase()
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &text[prefix.len()..])
}

/// Reads a letter label such as `D`, `(D)`, `D.`, `Option D`, or
/// `Answer: (D) text`. Without an `answer`/`option` prefix the letter must
/// stand alone or be followed by `.`, `)` or `:`, so "A man walks" is not
/// read as option A.
pub fn parse_option_label(text: &str, option_count: usize) -> Option<usize> {
    let mut rest = text.trim();
    let mut prefixed = false;
    for prefix in ["final answer", "the answer is", "answer", "option"] {
        if let Some(r) = strip_prefix_ci(rest, prefix) {
            rest = r.trim_start_matches([':', ' ', '\t', '*']);
            prefixed = true;
        }
    }
    if let Some(r) = strip_prefix_ci(rest, "option") {
        rest = r.trim_start();
        prefixed = true;
    }
    let (paren, body) = match rest.strip_prefix('(') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    let mut chars = body.chars();
    let letter = chars.next()?;
    let after = chars.as_str();
    if !letter.is_ascii_alphabetic() {
        return None;
    }
    let terminated = if paren {
        after.starts_with(')')
    } else {
        after.is_empty()
            || after.starts_with(['.', ')', ':', ','])
            || (prefixed && after.starts_with(char::is_whitespace))
    };
    let index = letter_index(letter)?;
    (terminated && index < option_count).then_some(index)
}

/// Maps free text to an option: letter label (whole text, then last line),
/// then exact option text, then longest prefix overlap with an option text.
pub fn match_option_text(text: &str, options: &[String]) -> Result<usize, MatchError> {
    if let Some(i) = parse_option_label(text, options.len()) {
        return Ok(i);
    }
    if let Some(last) = text.lines().rev().find(|l| !l.trim().is_empty()) {
        if let Some(i) = parse_option_label(last, options.len()) {
            return Ok(i);
        }
    }
    let answer = clean_label(text);
    if answer.is_empty() {
        return Err(MatchError::Unmatchable);
    }
    let cleaned: Vec<String> = options.iter().map(|o| clean_label(o)).collect();
    if let Some(i) = cleaned.iter().position(|o| *o == answer) {
        return Ok(i);
    }
    let overlaps: Vec<(usize, usize)> = cleaned
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            if answer.starts_with(o.as_str()) {
                Some((i, o.len()))
            } else if o.starts_with(answer.as_str()) {
                Some((i, answer.len()))
            } else {
                None
            }
        })
        .collect();
    let best = overlaps.iter().map(|(_, n)| *n).max().ok_or(MatchError::Unmatchable)?;
    let mut winners = overlaps.iter().filter(|(_, n)| *n == best);
    let (first, _) = winners.next().expect("max exists");
    if winners.next().is_some() {
        Err(MatchError::Ambiguous)
    } else {
        Ok(*first)
    }
}

pub const FINAL_ANSWER_TOOL: &str = "final_answer";

pub fn final_answer_schema() -> ToolSchema {
    ToolSchema {
        name: FINAL_ANSWER_TOOL.to_string(),
        description: "Commit to one answer option.".to_string(),
        parameters: json!({
            "type": "object",
            "properties": {
                "option": {"type": "string", "description": "Option letter, e.g. \"C\"."},
                "rationale": {"type": "string"},
                "evidence": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "kind": {"type": "string", "enum": ["caption_ref", "triplet", "video_observation"]},
                            "start": {"type": "number"},
                            "end": {"type": "number"},
                            "content": {"type": "string"}
                        },
                        "required": ["kind", "content"]
                    }
                }
            },
            "required": ["option"]
        }),
    }
}

/// Reads the `option` field of a final-answer call: a letter or a 0-based integer.
pub fn option_from_arguments(args: &Value, option_count: usize) -> Option<usize> {
    match args.get("option")? {
        Value::Number(n) => n.as_u64().map(|n| n as usize).filter(|n| *n < option_count),
        Value::String(s) => parse_option_label(s, option_count),
        _ => None,
    }
}

/// Matches any model turn to an option; structured calls first.
pub fn match_option(turn: &ModelTurnWire, options: &[String]) -> Result<usize, MatchError> {
    match turn {
        ModelTurnWire::ToolCall { name, arguments } if name == FINAL_ANSWER_TOOL => {
            let args: Value = serde_json::from_str(arguments).map_err(|_| MatchError::Unmatchable)?;
            option_from_arguments(&args, options.len()).ok_or(MatchError::Unmatchable)
        }
        ModelTurnWire::ToolCall { .. } => Err(MatchError::Unmatchable),
        ModelTurnWire::Text { content } => match_option_text(content, options),
    }
}

pub fn turn_text(turn: &ModelTurnWire) -> String {
    match turn {
        ModelTurnWire::Text { content } => content.clone(),
        ModelTurnWire::ToolCall { arguments, .. } => serde_json::from_str::<Value>(arguments)
            .ok()
            .and_then(|v| v.get("rationale").and_then(Value::as_str).map(str::to_string))
            .unwrap_or_else(|| arguments.clone()),
    }
}

pub const ORGANIZER_SYSTEM_PROMPT: &str = "You are the Organizer Agent. Specialized agents have each \
analyzed one modality of a video (captions, raw video, or scene graph) independently. Weigh their answers \
and the evidence behind them, resolve conflicts, and select the best matching option. Finish with a line \
`Answer: <letter>` or call final_answer.";

/// The aggregation prompt: the question, then every report's choice,
/// rationale, and evidence.
pub fn organizer_prompt(question: &QuestionRecord, reports: &[AgentReport]) -> String {
    let mut prompt = question.render();
    prompt.push_str("\nAgent reports:\n");
    for report in reports {
        prompt.push('\n');
        prompt.push_str(&report.render(question));
    }
    prompt
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrganizerError {
    #[error("organizer needs at least one report")]
    NoReports,
    #[error("organizer backend failed: {0}")]
    Backend(#[from] BackendError),
}

/// Asks the organizer model for a verdict. An answer that cannot be matched
/// to an option falls back to majority vote, recorded in `policy_id`.
pub fn organize_model(
    question: &QuestionRecord,
    reports: &[AgentReport],
    backend: &dyn ModelBackend,
    model_id: &str,
    ranking: &ModalityRanking,
) -> Result<Verdict, OrganizerError> {
    if reports.is_empty() {
        return Err(OrganizerError::NoReports);
    }
    let request = ChatRequest::new(
        model_id,
        alloc::vec![
            Message::system(ORGANIZER_SYSTEM_PROMPT),
            Message::user(organizer_prompt(question, reports)),
        ],
    )
    .with_tools(alloc::vec![final_answer_schema()]);
    let turn = backend.complete(&request)?;
    let justification = turn_text(&turn);
    let (final_option, policy_id) = match match_option(&turn, &question.options) {
        Ok(i) => (i, "model".to_string()),
        Err(err) => {
            let (i, rule) = majority_decision(reports, ranking).expect("reports non-empty");
            let why = match err {
                MatchError::Unmatchable => "unmatchable",
                MatchError::Ambiguous => "ambiguous",
            };
            (i, format!("model:{why}:fallback:{}", rule.id()))
        }
    };
    Ok(Verdict {
        final_option,
        justification,
        reports: reports.to_vec(),
        policy_id,
    })
}

/// Letter-prefixed option line, e.g. `(C) put it away`.
pub fn option_label(question: &QuestionRecord, index: usize) -> String {
    format!("({}) {}", option_letter(index), question.options[index])
}

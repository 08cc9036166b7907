//! Communication topologies and the trace auditor.
//!
//! * Report: agents work in isolation; the organizer sees only their final reports.
//! * Star: the organizer converses with any agent, one exchange at a time,
//!   keeping the whole history; agents never hear from each other.
//! * Debate: agents answer in a fixed order, each seeing the claims made before it.
//! * ReportStar: a Report round, then a Star round seeded with its reports.
//!
//! Every runner returns a [`RunTrace`] whose events are numbered by a single
//! sequencer. [`audit_trace`] checks a trace against its topology's rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{AgentError, AgentSession};
use crate::backend::{BackendError, ChatRequest, Message, ModelTurnWire, SharedBackend, ToolSchema, WireToolCall};
use crate::organizer::{
    best_category_decision, final_answer_schema, majority_decision, match_option, organize_model, turn_text,
    CategoryTable, MatchError, ModalityRanking, OrganizerError,
};
use crate::types::{
    option_letter, AgentReport, ModalityKind, Participant, PendingEvent, Phase, QuestionRecord, TraceEvent, Verdict,
};

pub const DEFAULT_MAX_EXCHANGES: u32 = 8;
pub const DEFAULT_DEBATE_ORDER: [ModalityKind; 3] = [ModalityKind::Text, ModalityKind::Video, ModalityKind::Graph];

pub const ASK_AGENT_TOOL: &str = "ask_agent";
pub const FORCED_VERDICT_MESSAGE: &str =
    "The exchange limit has been reached. You must give the final answer now: call final_answer.";
const STAR_NUDGE: &str = "Ask one agent with ask_agent, or call final_answer.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Report,
    Star,
    Debate,
    ReportStar,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [
        TopologyKind::Report,
        TopologyKind::Star,
        TopologyKind::Debate,
        TopologyKind::ReportStar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Report => "report",
            TopologyKind::Star => "star",
            TopologyKind::Debate => "debate",
            TopologyKind::ReportStar => "report_star",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TopologyKind::ALL
            .into_iter()
            .find(|t| t.as_str() == norm || (norm == "reportstar" && *t == TopologyKind::ReportStar))
            .ok_or_else(|| format!("unknown topology `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub question_id: String,
    pub topology: TopologyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debate_order: Option<Vec<ModalityKind>>,
    pub events: Vec<TraceEvent>,
    pub verdict: Verdict,
}

/// Append-only event log; the single place sequence numbers are assigned.
#[derive(Debug, Default)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn push(&mut self, event: PendingEvent) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(event.sequence(seq));
        seq
    }

    pub fn extend(&mut self, events: impl IntoIterator<Item = PendingEvent>) {
        for e in events {
            self.push(e);
        }
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// How the organizer turns reports into a verdict.
#[derive(Clone)]
pub enum OrganizerPolicy {
    Model { backend: SharedBackend, model_id: String },
    Majority,
    BestCategory(CategoryTable),
}

#[derive(Clone)]
pub struct Organizer {
    pub policy: OrganizerPolicy,
    pub ranking: ModalityRanking,
}

impl Organizer {
    pub fn model(backend: SharedBackend, model_id: impl Into<String>) -> Self {
        Organizer {
            policy: OrganizerPolicy::Model {
                backend,
                model_id: model_id.into(),
            },
            ranking: ModalityRanking::default(),
        }
    }

    pub fn majority() -> Self {
        Organizer {
            policy: OrganizerPolicy::Majority,
            ranking: ModalityRanking::default(),
        }
    }

    pub fn best_category(table: CategoryTable) -> Self {
        Organizer {
            policy: OrganizerPolicy::BestCategory(table),
            ranking: ModalityRanking::default(),
        }
    }

    pub fn with_ranking(mut self, ranking: ModalityRanking) -> Self {
        self.ranking = ranking;
        self
    }

    pub fn decide(&self, question: &QuestionRecord, reports: &[AgentReport]) -> Result<Verdict, TopologyError> {
        if reports.is_empty() {
            return Err(TopologyError::Organizer(OrganizerError::NoReports));
        }
        let (final_option, policy_id, justification) = match &self.policy {
            OrganizerPolicy::Model { backend, model_id } => {
                return Ok(organize_model(
                    question,
                    reports,
                    backend.as_ref(),
                    model_id,
                    &self.ranking,
                )?)
            }
            OrganizerPolicy::Majority => {
                let (i, rule) = majority_decision(reports, &self.ranking).expect("non-empty");
                (i, rule.id().to_string(), "majority vote over agent reports".to_string())
            }
            OrganizerPolicy::BestCategory(table) => {
                let (i, rule) =
                    best_category_decision(question.category, reports, table, &self.ranking).expect("non-empty");
                (
                    i,
                    rule.id(),
                    format!("best modality for category {}", question.category),
                )
            }
        };
        Ok(Verdict {
            final_option,
            justification,
            reports: reports.to_vec(),
            policy_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("a run needs exactly one agent per modality")]
    BadAgentSet,
    #[error("debate order must list each modality once")]
    InvalidDebateOrder,
    #[error("{0} topology needs a model-driven organizer")]
    OrganizerNotInteractive(TopologyKind),
    #[error("every agent failed: {0:?}")]
    RunFailed(Vec<(ModalityKind, AgentError)>),
    #[error(transparent)]
    Organizer(#[from] OrganizerError),
}

impl From<BackendError> for TopologyError {
    fn from(e: BackendError) -> Self {
        TopologyError::Organizer(OrganizerError::Backend(e))
    }
}

pub type AgentOutcome = (AgentSession, Result<AgentReport, AgentError>);

/// Runs the Report round: `ask(None)` on every session. Implementations
/// must return outcomes in input order.
pub trait Executor {
    fn run_all(&self, sessions: Vec<AgentSession>) -> Vec<AgentOutcome>;
}

/// Runs sessions one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl Executor for Sequential {
    fn run_all(&self, sessions: Vec<AgentSession>) -> Vec<AgentOutcome> {
        sessions
            .into_iter()
            .map(|mut s| {
                let result = s.ask(None);
                (s, result)
            })
            .collect()
    }
}

fn check_agent_set(sessions: &[AgentSession]) -> Result<(), TopologyError> {
    let modalities: BTreeSet<_> = sessions.iter().map(AgentSession::modality).collect();
    if sessions.len() == ModalityKind::ALL.len() && modalities.len() == sessions.len() {
        Ok(())
    } else {
        Err(TopologyError::BadAgentSet)
    }
}

const ORG: Participant = Participant::Organizer;

fn assign_event(question: &QuestionRecord, modality: ModalityKind) -> PendingEvent {
    PendingEvent::new(Phase::Assign, ORG, [Participant::Agent(modality)], question.render())
}

fn verdict_event(question: &QuestionRecord, verdict: &Verdict) -> PendingEvent {
    let payload = format!(
        "final=({}) {}\npolicy={}\n{}",
        option_letter(verdict.final_option),
        question.options[verdict.final_option],
        verdict.policy_id,
        verdict.justification
    );
    PendingEvent::new(Phase::Verdict, ORG, [], payload)
}

fn outcome_event(
    question: &QuestionRecord,
    modality: ModalityKind,
    phase: Phase,
    result: &Result<AgentReport, AgentError>,
) -> PendingEvent {
    let me = Participant::Agent(modality);
    match result {
        Ok(report) => PendingEvent::new(phase, me, [ORG], report.render(question)),
        Err(e) => PendingEvent::new(
            Phase::AgentFailure,
            me,
            [ORG],
            format!("AgentFailure{{{modality}}}: {e}"),
        ),
    }
}

fn report_round(
    question: &QuestionRecord,
    sessions: Vec<AgentSession>,
    executor: &dyn Executor,
    log: &mut TraceLog,
) -> (Vec<AgentSession>, Vec<AgentReport>, Vec<(ModalityKind, AgentError)>) {
    let outcomes = executor.run_all(sessions);
    let mut sessions = Vec::with_capacity(outcomes.len());
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (mut session, result) in outcomes {
        let modality = session.modality();
        log.push(assign_event(question, modality));
        log.extend(session.take_events());
        log.push(outcome_event(question, modality, Phase::Report, &result));
        match result {
            Ok(report) => reports.push(report),
            Err(e) => failures.push((modality, e)),
        }
        sessions.push(session);
    }
    (sessions, reports, failures)
}

pub fn run_report(
    question: &QuestionRecord,
    sessions: Vec<AgentSession>,
    organizer: &Organizer,
    executor: &dyn Executor,
) -> Result<RunTrace, TopologyError> {
    check_agent_set(&sessions)?;
    let mut log = TraceLog::default();
    let (_, reports, failures) = report_round(question, sessions, executor, &mut log);
    if reports.is_empty() {
        return Err(TopologyError::RunFailed(failures));
    }
    let verdict = organizer.decide(question, &reports)?;
    log.push(verdict_event(question, &verdict));
    Ok(RunTrace {
        question_id: question.id.clone(),
        topology: TopologyKind::Report,
        debate_order: None,
        events: log.into_events(),
        verdict,
    })
}

pub fn ask_agent_schema() -> ToolSchema {
    ToolSchema {
        name: ASK_AGENT_TOOL.to_string(),
        description: "Send a message to one specialized agent and receive its answer.".to_string(),
        parameters: serde_json::json!({
            "type": "object",
            "properties": {
                "agent": {"type": "string", "enum": ["text", "video", "graph"]},
                "message": {"type": "string"}
            },
            "required": ["agent", "message"]
        }),
    }
}

pub const STAR_SYSTEM_PROMPT: &str = "You are the Organizer Agent. You coordinate three specialized agents: \
text (reads captions), video (watches the video), and graph (reads scene graphs). Use ask_agent to question \
any of them, one at a time, as needed. Agents cannot talk to each other. When you have enough evidence, call \
final_answer with the best matching option letter.";

fn star_opening(question: &QuestionRecord, seed: &[AgentReport]) -> String {
    let mut text = question.render();
    if !seed.is_empty() {
        text.push_str("\nInitial agent reports:\n");
        for r in seed {
            text.push('\n');
            text.push_str(&r.render(question));
        }
    }
    text
}

struct StarRound<'a> {
    question: &'a QuestionRecord,
    backend: &'a SharedBackend,
    model_id: &'a str,
    ranking: &'a ModalityRanking,
    max_exchanges: u32,
}

impl StarRound<'_> {
    fn fallback(
        &self,
        latest: &BTreeMap<ModalityKind, AgentReport>,
        reason: &str,
        justification: String,
    ) -> Result<Verdict, TopologyError> {
        let reports: Vec<AgentReport> = latest.values().cloned().collect();
        let (i, rule) = majority_decision(&reports, self.ranking).ok_or(TopologyError::RunFailed(Vec::new()))?;
        Ok(Verdict {
            final_option: i,
            justification,
            reports,
            policy_id: format!("star:{reason}:fallback:{}", rule.id()),
        })
    }

    fn run(
        &self,
        sessions: &mut [AgentSession],
        seed: Vec<AgentReport>,
        log: &mut TraceLog,
    ) -> Result<Verdict, TopologyError> {
        let question = self.question;
        let mut conversation = vec![
            Message::system(STAR_SYSTEM_PROMPT),
            Message::user(star_opening(question, &seed)),
        ];
        let mut latest: BTreeMap<ModalityKind, AgentReport> = seed.into_iter().map(|r| (r.modality, r)).collect();
        let mut failures: Vec<(ModalityKind, AgentError)> = Vec::new();
        let mut exchanges = 0u32;
        let mut forced = false;
        let mut call_ids = 0u32;
        loop {
            if !forced && exchanges >= self.max_exchanges {
                forced = true;
                log.push(PendingEvent::new(
                    Phase::OrganizerMessage,
                    ORG,
                    [ORG],
                    FORCED_VERDICT_MESSAGE,
                ));
                conversation.push(Message::user(FORCED_VERDICT_MESSAGE));
            }
            let tools = if forced {
                vec![final_answer_schema()]
            } else {
                vec![ask_agent_schema(), final_answer_schema()]
            };
            let request = ChatRequest::new(self.model_id, conversation.clone()).with_tools(tools);
            let turn = self.backend.complete(&request)?;

            if let ModelTurnWire::ToolCall { name, arguments } = &turn {
                if name == ASK_AGENT_TOOL {
                    if forced {
                        return self.fallback(&latest, "forced", String::from("organizer kept asking after the limit"));
                    }
                    exchanges += 1;
                    let id = format!("org_call_{call_ids}");
                    call_ids += 1;
                    conversation.push(Message::assistant_tool_call(WireToolCall {
                        id: id.clone(),
                        name: name.clone(),
                        arguments: arguments.clone(),
                    }));
                    let reply = self.exchange(arguments, sessions, &mut latest, &mut failures, log);
                    conversation.push(Message::tool_result(id, reply));
                    continue;
                }
            }

            match match_option(&turn, &question.options) {
                Ok(final_option) => {
                    return Ok(Verdict {
                        final_option,
                        justification: turn_text(&turn),
                        reports: latest.into_values().collect(),
                        policy_id: String::from("star:model"),
                    })
                }
                Err(err) if forced => {
                    if latest.is_empty() {
                        return Err(TopologyError::RunFailed(failures));
                    }
                    let why = match err {
                        MatchError::Unmatchable => "unmatchable",
                        MatchError::Ambiguous => "ambiguous",
                    };
                    return self.fallback(&latest, why, turn_text(&turn));
                }
                Err(_) => {
                    exchanges += 1;
                    match &turn {
                        ModelTurnWire::Text { content } => conversation.push(Message::assistant(content.clone())),
                        ModelTurnWire::ToolCall { name, arguments } => {
                            let id = format!("org_call_{call_ids}");
                            call_ids += 1;
                            conversation.push(Message::assistant_tool_call(WireToolCall {
                                id: id.clone(),
                                name: name.clone(),
                                arguments: arguments.clone(),
                            }));
                            conversation.push(Message::tool_result(id, STAR_NUDGE));
                            continue;
                        }
                    }
                    conversation.push(Message::user(STAR_NUDGE));
                }
            }
        }
    }

    /// One organizer-to-agent message and its reply. Returns the text the
    /// organizer model receives as the tool result.
    fn exchange(
        &self,
        arguments: &str,
        sessions: &mut [AgentSession],
        latest: &mut BTreeMap<ModalityKind, AgentReport>,
        failures: &mut Vec<(ModalityKind, AgentError)>,
        log: &mut TraceLog,
    ) -> String {
        let args: Value = serde_json::from_str(arguments).unwrap_or(Value::Null);
        let target = args
            .get("agent")
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<ModalityKind>().ok());
        let message = args
            .get("message")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let Some(session) = target.and_then(|m| sessions.iter_mut().find(|s| s.modality() == m)) else {
            return String::from("error: `agent` must be one of text, video, graph");
        };
        let modality = session.modality();
        log.push(PendingEvent::new(
            Phase::OrganizerMessage,
            ORG,
            [Participant::Agent(modality)],
            message.clone(),
        ));
        let instruction = if message.trim().is_empty() {
            None
        } else {
            Some(message.as_str())
        };
        let result = session.ask(instruction);
        log.extend(session.take_events());
        log.push(outcome_event(self.question, modality, Phase::AgentMessage, &result));
        match result {
            Ok(report) => {
                let text = report.render(self.question);
                latest.insert(modality, report);
                text
            }
            Err(e) => {
                let text = format!("the {modality} agent failed: {e}");
                failures.push((modality, e));
                text
            }
        }
    }
}

fn star_round(
    question: &QuestionRecord,
    sessions: &mut [AgentSession],
    organizer: &Organizer,
    max_exchanges: u32,
    seed: Vec<AgentReport>,
    topology: TopologyKind,
    log: &mut TraceLog,
) -> Result<Verdict, TopologyError> {
    let OrganizerPolicy::Model { backend, model_id } = &organizer.policy else {
        return Err(TopologyError::OrganizerNotInteractive(topology));
    };
    StarRound {
        question,
        backend,
        model_id,
        ranking: &organizer.ranking,
        max_exchanges,
    }
    .run(sessions, seed, log)
}

pub fn run_star(
    question: &QuestionRecord,
    mut sessions: Vec<AgentSession>,
    organizer: &Organizer,
    max_exchanges: u32,
) -> Result<RunTrace, TopologyError> {
    check_agent_set(&sessions)?;
    let mut log = TraceLog::default();
    let verdict = star_round(
        question,
        &mut sessions,
        organizer,
        max_exchanges,
        Vec::new(),
        TopologyKind::Star,
        &mut log,
    )?;
    log.push(verdict_event(question, &verdict));
    Ok(RunTrace {
        question_id: question.id.clone(),
        topology: TopologyKind::Star,
        debate_order: None,
        events: log.into_events(),
        verdict,
    })
}

/// Instruction carrying earlier agents' claims into a debate turn.
pub fn prior_claims_message(question: &QuestionRecord, claims: &[AgentReport]) -> String {
    let mut text = String::from("Claims from agents that answered before you:\n");
    for claim in claims {
        text.push('\n');
        text.push_str(&claim.render(question));
    }
    text.push_str("\nSupport or challenge these claims using your own evidence.");
    text
}

pub fn run_debate(
    question: &QuestionRecord,
    sessions: Vec<AgentSession>,
    order: &[ModalityKind],
    organizer: &Organizer,
) -> Result<RunTrace, TopologyError> {
    check_agent_set(&sessions)?;
    let distinct: BTreeSet<_> = order.iter().collect();
    if order.len() != ModalityKind::ALL.len() || distinct.len() != order.len() {
        return Err(TopologyError::InvalidDebateOrder);
    }
    let mut by_modality: BTreeMap<ModalityKind, AgentSession> =
        sessions.into_iter().map(|s| (s.modality(), s)).collect();
    let mut log = TraceLog::default();
    let mut claims: Vec<AgentReport> = Vec::new();
    let mut failures = Vec::new();
    for (k, modality) in order.iter().enumerate() {
        let session = by_modality.get_mut(modality).expect("agent set checked");
        let instruction = (!claims.is_empty()).then(|| prior_claims_message(question, &claims));
        log.push(assign_event(question, *modality));
        let result = session.ask(instruction.as_deref());
        log.extend(session.take_events());
        let later = order[k + 1..].iter().map(|m| Participant::Agent(*m));
        let event = outcome_event(question, *modality, Phase::Report, &result);
        log.push(if result.is_ok() {
            event.also_visible_to(later)
        } else {
            event
        });
        match result {
            Ok(report) => claims.push(report),
            Err(e) => failures.push((*modality, e)),
        }
    }
    if claims.is_empty() {
        return Err(TopologyError::RunFailed(failures));
    }
    let verdict = organizer.decide(question, &claims)?;
    log.push(verdict_event(question, &verdict));
    Ok(RunTrace {
        question_id: question.id.clone(),
        topology: TopologyKind::Debate,
        debate_order: Some(order.to_vec()),
        events: log.into_events(),
        verdict,
    })
}

pub fn run_report_star(
    question: &QuestionRecord,
    sessions: Vec<AgentSession>,
    organizer: &Organizer,
    executor: &dyn Executor,
    max_exchanges: u32,
) -> Result<RunTrace, TopologyError> {
    check_agent_set(&sessions)?;
    if !matches!(organizer.policy, OrganizerPolicy::Model { .. }) {
        return Err(TopologyError::OrganizerNotInteractive(TopologyKind::ReportStar));
    }
    let mut log = TraceLog::default();
    let (mut sessions, reports, failures) = report_round(question, sessions, executor, &mut log);
    if reports.is_empty() {
        return Err(TopologyError::RunFailed(failures));
    }
    let verdict = star_round(
        question,
        &mut sessions,
        organizer,
        max_exchanges,
        reports,
        TopologyKind::ReportStar,
        &mut log,
    )?;
    log.push(verdict_event(question, &verdict));
    Ok(RunTrace {
        question_id: question.id.clone(),
        topology: TopologyKind::ReportStar,
        debate_order: None,
        events: log.into_events(),
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologySettings {
    pub max_exchanges: u32,
    pub debate_order: Vec<ModalityKind>,
}

impl Default for TopologySettings {
    fn default() -> Self {
        TopologySettings {
            max_exchanges: DEFAULT_MAX_EXCHANGES,
            debate_order: DEFAULT_DEBATE_ORDER.to_vec(),
        }
    }
}

pub fn run_topology(
    kind: TopologyKind,
    question: &QuestionRecord,
    sessions: Vec<AgentSession>,
    organizer: &Organizer,
    settings: &TopologySettings,
    executor: &dyn Executor,
) -> Result<RunTrace, TopologyError> {
    match kind {
        TopologyKind::Report => run_report(question, sessions, organizer, executor),
        TopologyKind::Star => run_star(question, sessions, organizer, settings.max_exchanges),
        TopologyKind::Debate => run_debate(question, sessions, &settings.debate_order, organizer),
        TopologyKind::ReportStar => run_report_star(question, sessions, organizer, executor, settings.max_exchanges),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationRule {
    SequenceGap,
    RecipientNotVisible,
    MissingVerdict,
    UnansweredToolCall,
    CrossAgentVisibility,
    OrganizerBeforeReports,
    DuplicateReport,
    OutOfOrderClaim,
    ForwardVisibility,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: ViolationRule,
    pub event_seq: u64,
    pub description: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at seq {}: {}", self.rule_id, self.event_seq, self.description)
    }
}

fn agents_in(event: &TraceEvent) -> BTreeSet<ModalityKind> {
    event
        .visible_to
        .iter()
        .chain(event.recipients.iter())
        .filter_map(|p| p.agent())
        .collect()
}

fn is_outcome(e: &TraceEvent) -> bool {
    matches!(e.phase, Phase::Report | Phase::AgentFailure)
}

struct Auditor<'a> {
    trace: &'a RunTrace,
    found: Vec<Violation>,
}

impl Auditor<'_> {
    fn flag(&mut self, rule: ViolationRule, event: &TraceEvent, description: String) {
        self.found.push(Violation {
            rule_id: rule,
            event_seq: event.seq,
            description,
        });
    }

    fn general(&mut self) {
        let events = &self.trace.events;
        for (i, e) in events.iter().enumerate() {
            if e.seq != i as u64 {
                self.flag(ViolationRule::SequenceGap, e, format!("expected seq {i}"));
            }
            if !e.recipients.is_subset(&e.visible_to) {
                self.flag(
                    ViolationRule::RecipientNotVisible,
                    e,
                    "a recipient cannot see the event".into(),
                );
            }
            if e.phase == Phase::ToolCall {
                let answered = events
                    .get(i + 1)
                    .is_some_and(|next| next.phase == Phase::ToolResult && next.sender == e.sender);
                if !answered {
                    self.flag(
                        ViolationRule::UnansweredToolCall,
                        e,
                        format!("{} tool call has no result", e.sender),
                    );
                }
            }
        }
        match events.last() {
            Some(last) if last.phase == Phase::Verdict => {}
            Some(last) => self.flag(
                ViolationRule::MissingVerdict,
                last,
                "trace does not end in a verdict".into(),
            ),
            None => self.found.push(Violation {
                rule_id: ViolationRule::MissingVerdict,
                event_seq: 0,
                description: "trace is empty".into(),
            }),
        }
    }

    /// Agent events must stay private to their sender and the organizer;
    /// organizer events may reach at most one agent. `allow` exempts events.
    fn isolation(&mut self, allow: impl Fn(&TraceEvent) -> bool) {
        for e in &self.trace.events {
            if allow(e) {
                continue;
            }
            let agents = agents_in(e);
            match e.sender {
                Participant::Agent(me) => {
                    if let Some(other) = agents.iter().find(|m| **m != me) {
                        self.flag(
                            ViolationRule::CrossAgentVisibility,
                            e,
                            format!("{me} agent's {:?} event reaches the {other} agent", e.phase),
                        );
                    }
                }
                Participant::Organizer if agents.len() > 1 => {
                    self.flag(
                        ViolationRule::CrossAgentVisibility,
                        e,
                        format!("organizer {:?} event reaches {} agents", e.phase, agents.len()),
                    );
                }
                Participant::Organizer => {}
            }
        }
    }

    fn duplicate_reports(&mut self) {
        let mut seen = BTreeSet::new();
        for e in &self.trace.events {
            if e.phase == Phase::Report && !seen.insert(e.sender) {
                self.flag(
                    ViolationRule::DuplicateReport,
                    e,
                    format!("second report from {}", e.sender),
                );
            }
        }
    }

    /// The organizer may not speak or decide before every assigned agent has
    /// reported. Later rounds (ReportStar phase 2) are unaffected.
    fn reports_first(&mut self) {
        let events = &self.trace.events;
        let assigned: BTreeSet<Participant> = events
            .iter()
            .filter(|e| e.phase == Phase::Assign)
            .flat_map(|e| e.recipients.iter().copied())
            .collect();
        let mut reported = BTreeSet::new();
        let mut round_done = assigned.is_empty();
        for e in events {
            if round_done {
                break;
            }
            if is_outcome(e) {
                reported.insert(e.sender);
                round_done = assigned.is_subset(&reported);
                continue;
            }
            let organizer_speaks = e.sender == ORG && matches!(e.phase, Phase::OrganizerMessage | Phase::Verdict);
            if organizer_speaks {
                let missing: Vec<String> = assigned.difference(&reported).map(|p| p.to_string()).collect();
                self.flag(
                    ViolationRule::OrganizerBeforeReports,
                    e,
                    format!("organizer {:?} while waiting on {}", e.phase, missing.join(", ")),
                );
            }
        }
    }

    fn debate(&mut self) {
        let order: Vec<ModalityKind> = self
            .trace
            .debate_order
            .clone()
            .unwrap_or_else(|| DEFAULT_DEBATE_ORDER.to_vec());
        let position = |m: ModalityKind| order.iter().position(|o| *o == m);
        let mut last_position: Option<usize> = None;
        for e in &self.trace.events {
            if !is_outcome(e) {
                continue;
            }
            let Some(me) = e.sender.agent() else { continue };
            let Some(p) = position(me) else {
                self.flag(
                    ViolationRule::OutOfOrderClaim,
                    e,
                    format!("{me} is not in the debate order"),
                );
                continue;
            };
            if last_position.is_some_and(|last| p <= last) {
                self.flag(ViolationRule::OutOfOrderClaim, e, format!("{me} claimed out of turn"));
            }
            last_position = Some(last_position.map_or(p, |last| last.max(p)));
            if e.phase == Phase::AgentFailure {
                continue;
            }
            for other in agents_in(e) {
                if other != me && position(other).is_none_or(|q| q < p) {
                    self.flag(
                        ViolationRule::ForwardVisibility,
                        e,
                        format!("{other} agent can see the later {me} agent's claim"),
                    );
                }
            }
        }
        self.isolation(|e| e.phase == Phase::Report);
    }
}

/// Every rule violation in `trace` under its declared topology.
pub fn audit_trace(trace: &RunTrace) -> Vec<Violation> {
    let mut auditor = Auditor {
        trace,
        found: Vec::new(),
    };
    auditor.general();
    match trace.topology {
        TopologyKind::Report | TopologyKind::ReportStar => {
            auditor.isolation(|_| false);
            auditor.duplicate_reports();
            auditor.reports_first();
        }
        TopologyKind::Star => auditor.isolation(|_| false),
        TopologyKind::Debate => {
            auditor.duplicate_reports();
            auditor.debate();
        }
    }
    auditor.found
}

mod common;

use std::sync::Arc;

use common::*;
use vma_core::backend::{BackendError, ModelTurnWire, SharedBackend};
use vma_core::organizer::policy_majority;
use vma_core::topology::{
    audit_trace, run_debate, run_report, run_report_star, run_star, Organizer, RunTrace, Sequential, TopologyError,
    ViolationRule, FORCED_VERDICT_MESSAGE,
};
use vma_core::types::{ModalityKind, Participant, Phase};

fn conflict_backends() -> [SharedBackend; 3] {
    [
        Script::new([
            caption_call(),
            answer_with(
                'D',
                "captions show the cup placed down",
                &[
                    (4.0, 8.0, "the man sets the cup on the table"),
                    (8.0, 12.0, "the cup rests on the table"),
                ],
            ),
        ]),
        Script::new([answer_with('B', "looks like a throwing motion", &[])]),
        Script::new([
            graph_call("cup"),
            answer_with(
                'D',
                "(man, puts, cup) follows the pickup",
                &[(0.0, 4.0, "(man, puts, cup)")],
            ),
        ]),
    ]
}

fn assert_clean(trace: &RunTrace) {
    let violations = audit_trace(trace);
    assert!(violations.is_empty(), "{violations:#?}");
}

fn count(trace: &RunTrace, phase: Phase) -> usize {
    trace.events.iter().filter(|e| e.phase == phase).count()
}

#[test]
fn conflict_resolves_to_d() {
    let q = question();
    let organizer = Organizer::model(evidence_weigher(), "organizer");
    let trace = run_report(&q, sessions(&q, conflict_backends()), &organizer, &Sequential).unwrap();
    assert_eq!(trace.verdict.final_option, 3);
    assert_eq!(trace.verdict.policy_id, "model");
    assert_clean(&trace);
    assert_eq!(count(&trace, Phase::Report), 3);
    assert_eq!(trace.events.last().unwrap().phase, Phase::Verdict);

    let choices: Vec<usize> = trace.verdict.reports.iter().map(|r| r.chosen).collect();
    assert_eq!(choices, [3, 1, 3]);
    assert_eq!(policy_majority(&trace.verdict.reports, &Default::default()), 3);
}

#[test]
fn unanimous_report() {
    let q = question();
    for organizer in [
        Organizer::model(evidence_weigher(), "organizer"),
        Organizer::majority(),
        Organizer::best_category(vma_core::organizer::default_category_table()),
    ] {
        let trace = run_report(&q, sessions(&q, answering(['A'; 3])), &organizer, &Sequential).unwrap();
        assert_eq!(trace.verdict.final_option, 0);
        assert_clean(&trace);
    }
}

#[test]
fn failed_agent_degrades_report() {
    let q = question();
    let backends: [SharedBackend; 3] = [
        Script::new([answer('D')]),
        Script::with_results([Err(BackendError::permanent("connection refused"))]),
        Script::new([answer('D')]),
    ];
    let trace = run_report(&q, sessions(&q, backends), &Organizer::majority(), &Sequential).unwrap();
    assert_eq!(trace.verdict.final_option, 3);
    assert_eq!(trace.verdict.reports.len(), 2);
    let failure = trace.events.iter().find(|e| e.phase == Phase::AgentFailure).unwrap();
    assert_eq!(failure.sender, Participant::Agent(ModalityKind::Video));
    assert_clean(&trace);
}

#[test]
fn all_agents_failing_fails_the_run() {
    let q = question();
    let backends: [SharedBackend; 3] = [Script::new([]), Script::new([]), Script::new([])];
    let err = run_report(&q, sessions(&q, backends), &Organizer::majority(), &Sequential).unwrap_err();
    assert!(matches!(err, TopologyError::RunFailed(f) if f.len() == 3));
}

#[test]
fn report_needs_one_agent_per_modality() {
    let q = question();
    let mut s = sessions(&q, answering(['A'; 3]));
    s.pop();
    let err = run_report(&q, s, &Organizer::majority(), &Sequential).unwrap_err();
    assert_eq!(err, TopologyError::BadAgentSet);
}

#[test]
fn star_queries_each_agent_once() {
    let q = question();
    let organizer_script = Script::new([
        ask("text", "What do the captions say?"),
        ask("video", "What do you see?"),
        ask("graph", "Any relations for the cup?"),
        ModelTurnWire::text("Answer: D"),
    ]);
    let organizer = Organizer::model(organizer_script.clone(), "organizer");
    let trace = run_star(&q, sessions(&q, answering(['D', 'B', 'D'])), &organizer, 8).unwrap();
    assert_eq!(trace.verdict.final_option, 3);
    assert_eq!(trace.verdict.policy_id, "star:model");
    assert_eq!(count(&trace, Phase::OrganizerMessage), 3);
    assert_eq!(count(&trace, Phase::AgentMessage), 3);
    assert_clean(&trace);

    // The organizer's context accumulates every exchange.
    let last = organizer_script.requests().pop().unwrap();
    let transcript: Vec<&str> = last.messages.iter().map(|m| m.content.as_str()).collect();
    for agent in ["Text Analysis Agent", "Video Analysis Agent", "Graph Analysis Agent"] {
        assert!(transcript.iter().any(|c| c.contains(agent)), "{agent} reply missing");
    }
}

#[test]
fn star_cap_forces_a_verdict() {
    let q = question();
    let mut turns: Vec<ModelTurnWire> = (0..8).map(|_| ask("text", "again?")).collect();
    turns.push(ModelTurnWire::text("Answer: A"));
    let organizer = Organizer::model(Script::new(turns), "organizer");
    let text = Script::new((0..8).map(|_| answer('A')));
    let backends: [SharedBackend; 3] = [text, Script::new([]), Script::new([])];
    let trace = run_star(&q, sessions(&q, backends), &organizer, 8).unwrap();
    assert_eq!(trace.verdict.final_option, 0);

    let org_msgs: Vec<_> = trace
        .events
        .iter()
        .filter(|e| e.phase == Phase::OrganizerMessage)
        .collect();
    assert_eq!(org_msgs.len(), 9);
    assert!(org_msgs[..8].iter().all(|e| e.payload != FORCED_VERDICT_MESSAGE));
    assert_eq!(org_msgs[8].payload, FORCED_VERDICT_MESSAGE);
    assert_clean(&trace);
}

#[test]
fn star_refusal_after_cap_falls_back() {
    let q = question();
    let turns: Vec<ModelTurnWire> = (0..10).map(|_| ask("text", "again?")).collect();
    let organizer = Organizer::model(Script::new(turns), "organizer");
    let backends: [SharedBackend; 3] = [
        Script::new((0..2).map(|_| answer('E'))),
        Script::new([]),
        Script::new([]),
    ];
    let trace = run_star(&q, sessions(&q, backends), &organizer, 2).unwrap();
    assert_eq!(trace.verdict.final_option, 4);
    assert!(trace.verdict.policy_id.starts_with("star:forced:fallback:"));
}

#[test]
fn star_may_ignore_agents() {
    let q = question();
    let organizer = Organizer::model(
        Script::new([ask("text", "What happened?"), ModelTurnWire::text("Answer: C")]),
        "organizer",
    );
    let trace = run_star(&q, sessions(&q, answering(['C'; 3])), &organizer, 8).unwrap();
    assert_eq!(trace.verdict.final_option, 2);
    for m in [ModalityKind::Video, ModalityKind::Graph] {
        let p = Participant::Agent(m);
        assert!(trace.events.iter().all(|e| e.sender != p && !e.visible_to.contains(&p)));
    }
    assert_clean(&trace);
}

#[test]
fn star_rejects_rule_based_organizer() {
    let q = question();
    let err = run_star(&q, sessions(&q, answering(['C'; 3])), &Organizer::majority(), 8).unwrap_err();
    assert!(matches!(err, TopologyError::OrganizerNotInteractive(_)));
}

#[test]
fn debate_passes_claims_forward() {
    let q = question();
    let order = [ModalityKind::Text, ModalityKind::Video, ModalityKind::Graph];
    let trace = run_debate(&q, sessions(&q, answering(['C'; 3])), &order, &Organizer::majority()).unwrap();
    assert_eq!(trace.verdict.final_option, 2);
    assert_clean(&trace);

    // Each claim is visible to its author, the organizer, and every later agent.
    let reports: Vec<_> = trace.events.iter().filter(|e| e.phase == Phase::Report).collect();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0].visible_to.len(), 4);
    assert_eq!(reports[2].visible_to.len(), 2);
}

#[test]
fn debate_contexts_hold_prior_claims() {
    let q = question();
    let scripts = [
        Script::new([answer('C')]),
        Script::new([answer('C')]),
        Script::new([answer('C')]),
    ];
    let backends: [SharedBackend; 3] = [scripts[0].clone(), scripts[1].clone(), scripts[2].clone()];
    let order = [ModalityKind::Text, ModalityKind::Video, ModalityKind::Graph];
    run_debate(&q, sessions(&q, backends), &order, &Organizer::majority()).unwrap();
    let claims_in = |s: &Arc<Script>| {
        let opening = &s.requests()[0].messages[1].content;
        opening.matches("] chose (").count()
    };
    assert_eq!(claims_in(&scripts[0]), 0);
    assert_eq!(claims_in(&scripts[1]), 1);
    assert!(scripts[1].requests()[0].messages[1]
        .content
        .contains("[Text Analysis Agent]"));
    assert_eq!(claims_in(&scripts[2]), 2);
}

#[test]
fn debate_rejects_bad_order() {
    let q = question();
    let order = [ModalityKind::Text, ModalityKind::Text, ModalityKind::Graph];
    let err = run_debate(&q, sessions(&q, answering(['C'; 3])), &order, &Organizer::majority()).unwrap_err();
    assert_eq!(err, TopologyError::InvalidDebateOrder);
}

#[test]
fn report_star_deciding_immediately_matches_report_shape() {
    let q = question();
    let organizer = Organizer::model(Script::new([ModelTurnWire::text("Answer: D")]), "organizer");
    let trace = run_report_star(&q, sessions(&q, answering(['D', 'B', 'D'])), &organizer, &Sequential, 8).unwrap();
    assert_eq!(trace.verdict.final_option, 3);
    assert_eq!(count(&trace, Phase::OrganizerMessage), 0);
    assert_eq!(count(&trace, Phase::AgentMessage), 0);
    assert_eq!(count(&trace, Phase::Report), 3);
    assert_clean(&trace);

    let report = run_report(
        &q,
        sessions(&q, answering(['D', 'B', 'D'])),
        &Organizer::majority(),
        &Sequential,
    )
    .unwrap();
    let phases = |t: &RunTrace| t.events.iter().map(|e| e.phase).collect::<Vec<_>>();
    assert_eq!(phases(&trace), phases(&report));
}

#[test]
fn report_star_requery_adds_one_pair() {
    let q = question();
    let organizer = Organizer::model(
        Script::new([ask("graph", "Check the cup again."), ModelTurnWire::text("Answer: D")]),
        "organizer",
    );
    let backends: [SharedBackend; 3] = [
        Script::new([answer('D')]),
        Script::new([answer('B')]),
        Script::new([answer('D'), graph_call("cup"), answer('D')]),
    ];
    let trace = run_report_star(&q, sessions(&q, backends), &organizer, &Sequential, 8).unwrap();
    assert_eq!(count(&trace, Phase::OrganizerMessage), 1);
    assert_eq!(count(&trace, Phase::AgentMessage), 1);
    let msg = trace
        .events
        .iter()
        .find(|e| e.phase == Phase::OrganizerMessage)
        .unwrap();
    assert!(msg.recipients.contains(&Participant::Agent(ModalityKind::Graph)));
    assert_clean(&trace);
}

fn clean_report_trace() -> RunTrace {
    let q = question();
    run_report(
        &q,
        sessions(&q, answering(['D', 'B', 'D'])),
        &Organizer::majority(),
        &Sequential,
    )
    .unwrap()
}

fn rules(trace: &RunTrace) -> Vec<ViolationRule> {
    audit_trace(trace).into_iter().map(|v| v.rule_id).collect()
}

#[test]
fn graph_seeing_video_claim_is_flagged_once() {
    let mut trace = clean_report_trace();
    let claim = trace
        .events
        .iter_mut()
        .find(|e| e.phase == Phase::Report && e.sender == Participant::Agent(ModalityKind::Video))
        .unwrap();
    claim.visible_to.insert(Participant::Agent(ModalityKind::Graph));
    assert_eq!(rules(&trace), [ViolationRule::CrossAgentVisibility]);
}

#[test]
fn debate_forward_visibility_is_flagged_once() {
    let q = question();
    let order = [ModalityKind::Text, ModalityKind::Video, ModalityKind::Graph];
    let mut trace = run_debate(&q, sessions(&q, answering(['C'; 3])), &order, &Organizer::majority()).unwrap();
    let last_claim = trace
        .events
        .iter_mut()
        .find(|e| e.phase == Phase::Report && e.sender == Participant::Agent(ModalityKind::Graph))
        .unwrap();
    last_claim.visible_to.insert(Participant::Agent(ModalityKind::Text));
    assert_eq!(rules(&trace), [ViolationRule::ForwardVisibility]);
}

#[test]
fn debate_claims_out_of_order_are_flagged() {
    let q = question();
    let order = [ModalityKind::Text, ModalityKind::Video, ModalityKind::Graph];
    let mut trace = run_debate(&q, sessions(&q, answering(['C'; 3])), &order, &Organizer::majority()).unwrap();
    trace.debate_order = Some(vec![ModalityKind::Graph, ModalityKind::Video, ModalityKind::Text]);
    assert!(rules(&trace).contains(&ViolationRule::OutOfOrderClaim));
}

#[test]
fn organizer_speaking_early_is_flagged() {
    let mut trace = clean_report_trace();
    let verdict = trace.events.pop().unwrap();
    let at = trace.events.iter().position(|e| e.phase == Phase::Report).unwrap();
    trace.events.insert(at, verdict);
    for (i, e) in trace.events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    let found = rules(&trace);
    assert!(found.contains(&ViolationRule::OrganizerBeforeReports));
    assert!(found.contains(&ViolationRule::MissingVerdict));
}

#[test]
fn duplicate_report_and_gap_are_flagged() {
    let mut trace = clean_report_trace();
    let dup = trace.events.iter().find(|e| e.phase == Phase::Report).unwrap().clone();
    let n = trace.events.len();
    trace.events.insert(n - 1, dup);
    let found = rules(&trace);
    assert!(found.contains(&ViolationRule::DuplicateReport));
    assert!(found.contains(&ViolationRule::SequenceGap));
}

#[test]
fn unanswered_tool_call_is_flagged() {
    let mut trace = clean_report_trace();
    let at = trace.events.iter().position(|e| e.phase == Phase::ToolResult).unwrap();
    trace.events.remove(at);
    for (i, e) in trace.events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    assert_eq!(rules(&trace), [ViolationRule::UnansweredToolCall]);
}

#[test]
fn phase_one_leak_in_report_star_is_flagged() {
    let q = question();
    let organizer = Organizer::model(Script::new([ModelTurnWire::text("Answer: D")]), "organizer");
    let mut trace = run_report_star(&q, sessions(&q, answering(['D', 'B', 'D'])), &organizer, &Sequential, 8).unwrap();
    let tool_result = trace.events.iter_mut().find(|e| e.phase == Phase::ToolResult).unwrap();
    tool_result.visible_to.insert(Participant::Agent(ModalityKind::Video));
    assert_eq!(rules(&trace), [ViolationRule::CrossAgentVisibility]);
}

#[test]
fn star_broadcast_is_flagged() {
    let q = question();
    let organizer = Organizer::model(
        Script::new([ask("text", "What happened?"), ModelTurnWire::text("Answer: C")]),
        "organizer",
    );
    let mut trace = run_star(&q, sessions(&q, answering(['C'; 3])), &organizer, 8).unwrap();
    let msg = trace
        .events
        .iter_mut()
        .find(|e| e.phase == Phase::OrganizerMessage)
        .unwrap();
    msg.recipients.insert(Participant::Agent(ModalityKind::Video));
    msg.visible_to.insert(Participant::Agent(ModalityKind::Video));
    assert_eq!(rules(&trace), [ViolationRule::CrossAgentVisibility]);
}

#[test]
fn hidden_recipient_is_flagged() {
    let mut trace = clean_report_trace();
    let assign = trace.events.iter_mut().find(|e| e.phase == Phase::Assign).unwrap();
    assign.visible_to.clear();
    assert!(rules(&trace).contains(&ViolationRule::RecipientNotVisible));
}

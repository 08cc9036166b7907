//! Accuracy aggregation and run-to-run comparison.
//!
//! Questions that errored are counted but kept out of the accuracy
//! denominator. Percentages keep full precision; [`display_percent`]
//! rounds for reports.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::CategoryCode;

/// What happened to one question in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub question_id: String,
    pub category: CategoryCode,
    pub gold: Option<usize>,
    pub verdict: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

impl Outcome {
    pub fn answered(&self) -> bool {
        self.verdict.is_some()
    }

    pub fn correct(&self) -> bool {
        self.verdict.is_some() && self.verdict == self.gold
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub total: u32,
    pub answered: u32,
    pub correct: u32,
}

impl Tally {
    fn add(&mut self, outcome: &Outcome) {
        self.total += 1;
        if outcome.answered() {
            self.answered += 1;
        }
        if outcome.correct() {
            self.correct += 1;
        }
    }

    /// Percent correct among answered questions; 0 when nothing was answered.
    pub fn accuracy(&self) -> f64 {
        if self.answered == 0 {
            0.0
        } else {
            100.0 * f64::from(self.correct) / f64::from(self.answered)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: Tally,
    pub overall_accuracy: f64,
    pub per_category: BTreeMap<CategoryCode, Tally>,
    pub per_category_accuracy: BTreeMap<CategoryCode, f64>,
    pub errors: u32,
}

impl Aggregate {
    pub fn category_accuracy(&self, category: CategoryCode) -> Option<f64> {
        self.per_category_accuracy.get(&category).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("question {question_id} has no gold answer")]
    MissingGold { question_id: String },
    #[error("no outcomes to score")]
    EmptyRun,
    #[error("question {0} appears more than once")]
    DuplicateQuestion(String),
    #[error("runs cover different questions ({only_a} only in a, {only_b} only in b)")]
    QuestionSetMismatch { only_a: usize, only_b: usize },
}

pub fn score(outcomes: &[Outcome]) -> Result<Aggregate, ScoreError> {
    if outcomes.is_empty() {
        return Err(ScoreError::EmptyRun);
    }
    let mut seen = BTreeSet::new();
    let mut overall = Tally::default();
    let mut per_category: BTreeMap<CategoryCode, Tally> = BTreeMap::new();
    let mut errors = 0;
    for outcome in outcomes {
        if outcome.gold.is_none() {
            return Err(ScoreError::MissingGold {
                question_id: outcome.question_id.clone(),
            });
        }
        if !seen.insert(outcome.question_id.as_str()) {
            return Err(ScoreError::DuplicateQuestion(outcome.question_id.clone()));
        }
        overall.add(outcome);
        per_category.entry(outcome.category).or_default().add(outcome);
        if !outcome.answered() {
            errors += 1;
        }
    }
    Ok(Aggregate {
        overall,
        overall_accuracy: overall.accuracy(),
        per_category_accuracy: per_category.iter().map(|(c, t)| (*c, t.accuracy())).collect(),
        per_category,
        errors,
    })
}

/// One decimal place, as reported in result tables.
pub fn display_percent(value: f64) -> String {
    format!("{value:.1}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub question_id: String,
    pub category: CategoryCode,
    pub gold: Option<usize>,
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub a_correct: bool,
    pub b_correct: bool,
}

/// Paired correctness counts. Unanswered questions count as wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McNemarCounts {
    pub both_right: u32,
    pub both_wrong: u32,
    pub a_only: u32,
    pub b_only: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    pub flips: Vec<Flip>,
    /// Accuracy of b minus accuracy of a, in points.
    pub category_deltas: BTreeMap<CategoryCode, f64>,
    pub overall_delta: f64,
    pub mcnemar: McNemarCounts,
}

pub fn compare_runs(a: &[Outcome], b: &[Outcome]) -> Result<RunDiff, ScoreError> {
    let score_a = score(a)?;
    let score_b = score(b)?;
    let by_id: BTreeMap<&str, &Outcome> = b.iter().map(|o| (o.question_id.as_str(), o)).collect();
    let only_a = a.iter().filter(|o| !by_id.contains_key(o.question_id.as_str())).count();
    let only_b = b.len() + only_a - a.len();
    if only_a > 0 || only_b > 0 {
        return Err(ScoreError::QuestionSetMismatch { only_a, only_b });
    }

    let mut flips = Vec::new();
    let mut mcnemar = McNemarCounts::default();
    let mut ordered: Vec<&Outcome> = a.iter().collect();
    ordered.sort_by(|x, y| x.question_id.cmp(&y.question_id));
    for oa in ordered {
        let ob = by_id[oa.question_id.as_str()];
        let (ra, rb) = (oa.correct(), ob.correct());
        match (ra, rb) {
            (true, true) => mcnemar.both_right += 1,
            (false, false) => mcnemar.both_wrong += 1,
            (true, false) => mcnemar.a_only += 1,
            (false, true) => mcnemar.b_only += 1,
        }
        if oa.verdict != ob.verdict {
            flips.push(Flip {
                question_id: oa.question_id.clone(),
                category: oa.category,
                gold: oa.gold,
                a: oa.verdict,
                b: ob.verdict,
                a_correct: ra,
                b_correct: rb,
            });
        }
    }

    let categories: BTreeSet<CategoryCode> = score_a
        .per_category
        .keys()
        .chain(score_b.per_category.keys())
        .copied()
        .collect();
    let category_deltas = categories
        .into_iter()
        .map(|c| {
            let pa = score_a.category_accuracy(c).unwrap_or(0.0);
            let pb = score_b.category_accuracy(c).unwrap_or(0.0);
            (c, pb - pa)
        })
        .collect();
    Ok(RunDiff {
        flips,
        category_deltas,
        overall_delta: score_b.overall_accuracy - score_a.overall_accuracy,
        mcnemar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn outcome(id: usize, category: CategoryCode, gold: usize, verdict: Option<usize>) -> Outcome {
        Outcome {
            question_id: format!("q{id}"),
            category,
            gold: Some(gold),
            verdict,
            error: None,
            trace_path: None,
        }
    }

    #[test]
    fn four_of_five() {
        let run: Vec<_> = (0..5)
            .map(|i| outcome(i, CategoryCode::CausalHow, 0, Some(if i == 4 { 1 } else { 0 })))
            .collect();
        let agg = score(&run).unwrap();
        assert_eq!(agg.overall_accuracy, 80.0);
        assert_eq!(display_percent(agg.overall_accuracy), "80.0");
    }

    #[test]
    fn empty_and_missing_gold() {
        assert_eq!(score(&[]), Err(ScoreError::EmptyRun));
        let mut o = outcome(0, CategoryCode::Other, 0, Some(0));
        o.gold = None;
        assert!(matches!(score(&[o]), Err(ScoreError::MissingGold { .. })));
    }

    #[test]
    fn errors_leave_the_denominator() {
        let mut failed = outcome(1, CategoryCode::CausalWhy, 2, None);
        failed.error = Some("backend down".to_string());
        let run = [outcome(0, CategoryCode::CausalWhy, 2, Some(2)), failed];
        let agg = score(&run).unwrap();
        assert_eq!(agg.overall_accuracy, 100.0);
        assert_eq!(agg.errors, 1);
        assert_eq!(agg.overall.total, 2);
        assert_eq!(agg.per_category.len(), 1);
    }

    #[test]
    fn diff_of_one_flip_in_ten() {
        let a: Vec<_> = (0..10)
            .map(|i| outcome(i, CategoryCode::TemporalPresent, 0, Some(if i == 3 { 1 } else { 0 })))
            .collect();
        let mut b = a.clone();
        b[3].verdict = Some(0);
        let same = compare_runs(&a, &a).unwrap();
        assert!(same.flips.is_empty());
        assert_eq!(same.overall_delta, 0.0);
        let d = compare_runs(&a, &b).unwrap();
        assert_eq!(d.flips.len(), 1);
        assert!((d.overall_delta - 10.0).abs() < 1e-9);
        assert_eq!(
            d.mcnemar,
            McNemarCounts {
                both_right: 9,
                both_wrong: 0,
                a_only: 0,
                b_only: 1
            }
        );
    }

    #[test]
    fn disjoint_sets_mismatch() {
        let a = [outcome(0, CategoryCode::Other, 0, Some(0))];
        let b = [outcome(1, CategoryCode::Other, 0, Some(0))];
        assert_eq!(
            compare_runs(&a, &b),
            Err(ScoreError::QuestionSetMismatch { only_a: 1, only_b: 1 })
        );
    }
}

//! Dataset files: a JSON array of
//! `{id, video, question, options, answer?, category?}` records.
//!
//! `answer` is an option letter ("C") or a 0-based index; records without it
//! load with no gold answer.

use std::path::Path;

use serde_json::Value;
use thiserror::Error;
use vma_core::types::{letter_index, normalize_question, CategoryCode, QuestionError, QuestionRecord, RawQuestion};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset must be a JSON array of records")]
    NotAnArray,
    #[error("record {record_index}: bad or missing `{field}`: {reason}")]
    SchemaError {
        record_index: usize,
        field: &'static str,
        reason: String,
    },
}

pub fn load_dataset(path: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<QuestionRecord>, DatasetError> {
    let Value::Array(records) = serde_json::from_str::<Value>(text)? else {
        return Err(DatasetError::NotAnArray);
    };
    records.iter().enumerate().map(|(i, r)| parse_record(i, r)).collect()
}

fn schema(record_index: usize, field: &'static str, reason: impl Into<String>) -> DatasetError {
    DatasetError::SchemaError {
        record_index,
        field,
        reason: reason.into(),
    }
}

fn text_field(index: usize, record: &Value, field: &'static str) -> Result<String, DatasetError> {
    match record.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) if field == "id" || field == "video" => Ok(n.to_string()),
        Some(_) => Err(schema(index, field, "expected a string")),
        None => Err(schema(index, field, "missing")),
    }
}

fn parse_answer(index: usize, value: Option<&Value>) -> Result<Option<usize>, DatasetError> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| schema(index, "answer", "expected a non-negative index")),
        Some(Value::String(s)) => {
            let s = s.trim();
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_alphabetic() => Ok(letter_index(c)),
                _ => s
                    .parse::<usize>()
                    .map(Some)
                    .map_err(|_| schema(index, "answer", format!("`{s}` is neither a letter nor an index"))),
            }
        }
        Some(_) => Err(schema(index, "answer", "expected a letter or an index")),
    }
}

fn parse_record(index: usize, record: &Value) -> Result<QuestionRecord, DatasetError> {
    if !record.is_object() {
        return Err(schema(index, "record", "expected an object"));
    }
    let options = match record.get("options") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|o| o.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| schema(index, "options", "every option must be a string"))?,
        Some(_) => return Err(schema(index, "options", "expected an array of strings")),
        None => return Err(schema(index, "options", "missing")),
    };
    let category = match record.get("category") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(
            s.parse::<CategoryCode>()
                .map_err(|e| schema(index, "category", e.to_string()))?,
        ),
        Some(_) => return Err(schema(index, "category", "expected a category code")),
    };
    let raw = RawQuestion {
        id: text_field(index, record, "id")?,
        video_id: text_field(index, record, "video")?,
        question: text_field(index, record, "question")?,
        options,
        gold: parse_answer(index, record.get("answer"))?,
        category,
    };
    normalize_question(raw).map_err(|e| {
        let field = match e {
            QuestionError::EmptyQuestion => "question",
            QuestionError::GoldOutOfRange { .. } => "answer",
            _ => "options",
        };
        schema(index, field, e.to_string())
    })
}

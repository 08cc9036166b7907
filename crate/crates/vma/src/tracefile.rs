//! Trace files: a header line, one line per event, then the verdict.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use vma_core::topology::{RunTrace, TopologyKind};
use vma_core::types::{ModalityKind, TraceEvent, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub question_id: String,
    pub topology: TopologyKind,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debate_order: Option<Vec<ModalityKind>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Event(TraceEvent),
    Verdict(Verdict),
}

pub fn write_trace(path: &Path, trace: &RunTrace, config_digest: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    let mut line = |l: &TraceLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")
    };
    line(&TraceLine::Header(TraceHeader {
        question_id: trace.question_id.clone(),
        topology: trace.topology,
        config_digest: config_digest.to_string(),
        debate_order: trace.debate_order.clone(),
    }))?;
    for event in &trace.events {
        line(&TraceLine::Event(event.clone()))?;
    }
    line(&TraceLine::Verdict(trace.verdict.clone()))?;
    out.flush()
}

fn invalid(path: &Path, message: String) -> std::io::Error {
    std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}: {message}", path.display()),
    )
}

pub fn read_trace(path: &Path) -> std::io::Result<(TraceHeader, RunTrace)> {
    let mut header = None;
    let mut events = Vec::new();
    let mut verdict = None;
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).map_err(|e| invalid(path, format!("line {}: {e}", i + 1)))? {
            TraceLine::Header(h) if header.is_none() => header = Some(h),
            TraceLine::Header(_) => return Err(invalid(path, format!("line {}: second header", i + 1))),
            TraceLine::Event(e) => events.push(e),
            TraceLine::Verdict(v) => verdict = Some(v),
        }
    }
    let header = header.ok_or_else(|| invalid(path, "missing header".into()))?;
    let verdict = verdict.ok_or_else(|| invalid(path, "missing verdict line".into()))?;
    let trace = RunTrace {
        question_id: header.question_id.clone(),
        topology: header.topology,
        debate_order: header.debate_order.clone(),
        events,
        verdict,
    };
    Ok((header, trace))
}

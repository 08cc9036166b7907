//! Record/replay cassettes: JSONL files of request/response pairs keyed by
//! the canonical request hash.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vma_core::backend::{request_key, BackendError, ChatRequest, ModelBackend, ModelTurnWire, SharedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub key: String,
    pub request: ChatRequest,
    pub response: ModelTurnWire,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cassette {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CassetteError + '_ {
    move |source| CassetteError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every record, checking that keys match their requests and are unique.
pub fn load_cassette(path: &Path) -> Result<BTreeMap<String, CassetteRecord>, CassetteError> {
    let mut records = BTreeMap::new();
    if !path.exists() {
        return Ok(records);
    }
    let file = File::open(path).map_err(io_err(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| CassetteError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: CassetteRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        let key = request_key(&record.request);
        if key != record.key {
            return Err(corrupt(format!(
                "stored key {} does not match request hash {key}",
                record.key
            )));
        }
        if records.insert(key.clone(), record).is_some() {
            return Err(corrupt(format!("duplicate key {key}")));
        }
    }
    Ok(records)
}

/// Serves responses from a cassette; never touches the network.
pub struct ReplayBackend {
    records: BTreeMap<String, CassetteRecord>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, CassetteError> {
        Ok(ReplayBackend {
            records: load_cassette(path)?,
        })
    }

    pub fn from_records(records: impl IntoIterator<Item = CassetteRecord>) -> Self {
        ReplayBackend {
            records: records.into_iter().map(|r| (r.key.clone(), r)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ModelBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        let key = request_key(request);
        self.records
            .get(&key)
            .map(|r| r.response.clone())
            .ok_or(BackendError::CassetteMiss { key })
    }
}

/// Answers from the cassette when it can; otherwise asks `inner` and appends
/// the exchange. All writes go through one locked writer.
pub struct RecordingBackend {
    inner: SharedBackend,
    backend_id: String,
    known: Mutex<BTreeMap<String, ModelTurnWire>>,
    writer: Mutex<BufWriter<File>>,
}

impl RecordingBackend {
    pub fn open(path: &Path, inner: SharedBackend, backend_id: impl Into<String>) -> Result<Self, CassetteError> {
        let known = load_cassette(path)?.into_iter().map(|(k, r)| (k, r.response)).collect();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(path))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(RecordingBackend {
            inner,
            backend_id: backend_id.into(),
            known: Mutex::new(known),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl ModelBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ModelTurnWire, BackendError> {
        let key = request_key(request);
        if let Some(hit) = self.known.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let response = self.inner.complete(request)?;
        let mut known = self.known.lock().unwrap();
        if let Some(raced) = known.get(&key) {
            return Ok(raced.clone());
        }
        let record = CassetteRecord {
            key: key.clone(),
            request: request.clone(),
            response: response.clone(),
            backend_id: self.backend_id.clone(),
        };
        let line = serde_json::to_string(&record).expect("cassette records serialize");
        let mut writer = self.writer.lock().unwrap();
        writeln!(writer, "{line}")
            .and_then(|_| writer.flush())
            .map_err(|e| BackendError::permanent(format!("cassette write failed: {e}")))?;
        known.insert(key, response.clone());
        Ok(response)
    }
}

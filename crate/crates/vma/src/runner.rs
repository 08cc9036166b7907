//! Benchmark execution: per-question runs with cached captions and scene
//! graphs, a resumable ledger, per-question traces and aggregate results.
//!
//! Output directory layout:
//!
//! ```text
//! ledger.jsonl        one Outcome per completed question, append-only
//! traces/<id>.jsonl   trace of each answered question
//! cache/*.jsonl       captions and scene graphs
//! outcomes.jsonl      per-question results in dataset order
//! results.json        aggregate accuracies
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vma_core::agents::{AgentConfig, AgentSession, CaptionStore, GraphStore, ModalityContext, VideoHandle};
use vma_core::backend::SharedBackend;
use vma_core::captioning::caption_video;
use vma_core::organizer::CategoryTable;
use vma_core::scenegraph::build_scene_graphs;
use vma_core::scoring::{score, Aggregate, Outcome};
use vma_core::topology::{run_topology, Executor, Organizer, RunTrace, Sequential, TopologyKind};
use vma_core::types::{ModalityKind, QuestionRecord};

use crate::cassette::{CassetteError, RecordingBackend, ReplayBackend};
use crate::config::{BackendKind, ConfigError, OrganizerKind, RunConfig};
use crate::dataset::{load_dataset, DatasetError};
use crate::exec::Threaded;
use crate::frames::list_frames;
use crate::mock::SimulatedModel;
use crate::remote::{RemoteBackend, RemoteConfig};
use crate::store::{CaptionCache, GraphCache, GENERIC_SCOPE};
use crate::tracefile::write_trace;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cassette(#[from] CassetteError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Setup(String),
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Where model calls go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendMode {
    /// Straight to the configured backend.
    #[default]
    Live,
    /// Through the configured backend, appending every exchange to the cassette.
    Record,
    /// Only from the cassette; a request not on it fails.
    Replay,
}

/// The backend for `config` in `mode`. The simulated model's answer key is
/// taken from `questions`.
pub fn build_backend(
    config: &RunConfig,
    mode: BackendMode,
    questions: &[QuestionRecord],
) -> Result<SharedBackend, RunError> {
    let cassette = || {
        config
            .backend
            .cassette
            .clone()
            .ok_or_else(|| RunError::Setup("backend.cassette must be set for record and replay".into()))
    };
    if mode == BackendMode::Replay {
        return Ok(Arc::new(ReplayBackend::open(&cassette()?)?));
    }
    let upstream: SharedBackend = match config.backend.kind {
        BackendKind::Simulated => Arc::new(
            SimulatedModel::new(config.seed)
                .with_answers(questions.iter().filter_map(|q| q.gold.map(|g| (q.question.clone(), g)))),
        ),
        BackendKind::Remote => {
            let mut remote = RemoteConfig::from_env().unwrap_or_else(|| RemoteConfig::new(""));
            if let Some(endpoint) = &config.backend.endpoint {
                remote.endpoint = endpoint.clone();
            }
            if remote.endpoint.is_empty() {
                return Err(RunError::Setup(
                    "remote backend needs backend.endpoint or the VMA_ENDPOINT variable".into(),
                ));
            }
            Arc::new(RemoteBackend::new(remote))
        }
    };
    match mode {
        BackendMode::Record => Ok(Arc::new(RecordingBackend::open(
            &cassette()?,
            upstream,
            config.backend.backend_id.clone(),
        )?)),
        _ => Ok(upstream),
    }
}

/// Per-question line of `outcomes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub correct: bool,
}

impl From<Outcome> for QuestionResult {
    fn from(outcome: Outcome) -> Self {
        QuestionResult {
            correct: outcome.correct(),
            outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub topology: TopologyKind,
    pub config_digest: String,
    pub questions: usize,
    pub errors: usize,
    /// Absent when some question has no gold answer.
    pub aggregate: Option<Aggregate>,
    #[serde(skip)]
    pub outcomes: Vec<Outcome>,
}

/// Everything needed to answer single questions under one config.
pub struct Engine {
    config: RunConfig,
    backend: SharedBackend,
    captions: CaptionCache,
    graphs: GraphCache,
    table: CategoryTable,
    digest: String,
    executor: Box<dyn Executor + Send + Sync>,
}

pub fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Engine {
    pub fn new(config: RunConfig, backend: SharedBackend) -> Result<Self, RunError> {
        config.validate()?;
        let cache_dir = config.output_dir.join("cache");
        let captions = CaptionCache::open(&cache_dir.join("captions.jsonl")).map_err(io("caption cache"))?;
        let graphs = GraphCache::open(&cache_dir.join("graphs.jsonl")).map_err(io("scene graph cache"))?;
        let executor: Box<dyn Executor + Send + Sync> = if config.parallel_agents {
            Box::new(Threaded)
        } else {
            Box::new(Sequential)
        };
        Ok(Engine {
            table: config.category_table()?,
            digest: config.digest(),
            config,
            backend,
            captions,
            graphs,
            executor,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    pub fn organizer(&self) -> Organizer {
        let organizer = match self.config.organizer {
            OrganizerKind::Model => Organizer::model(self.backend.clone(), self.config.models.organizer.clone()),
            OrganizerKind::Majority => Organizer::majority(),
            OrganizerKind::BestCategory => Organizer::best_category(self.table.clone()),
        };
        organizer.with_ranking(self.config.ranking)
    }

    /// Captions and scene graphs for `question`, from cache or freshly built.
    /// A failure leaves the store empty so only the agents that need it fail.
    fn stores(&self, question: &QuestionRecord) -> (CaptionStore, GraphStore, Vec<vma_core::backend::MediaRef>) {
        let frames = list_frames(&self.config.frames_root.join(&question.video_id)).unwrap_or_default();
        let settings = self.config.caption_settings();
        let scope = if settings.guided {
            question.id.as_str()
        } else {
            GENERIC_SCOPE
        };
        let captions = self.captions.get(&question.video_id, scope).or_else(|| {
            let fresh = caption_video(&frames, question, self.backend.as_ref(), &settings).ok()?;
            self.captions.put(&question.video_id, scope, &fresh).ok()?;
            Some(fresh)
        });
        let Some(captions) = captions else {
            let graph = GraphStore::lazy(
                CaptionStore::default(),
                self.backend.clone(),
                self.config.graph_settings(),
            );
            return (CaptionStore::default(), graph, frames);
        };
        let graphs = self.graphs.get(&question.video_id, scope).or_else(|| {
            let fresh = build_scene_graphs(&captions, self.backend.as_ref(), &self.config.graph_settings()).ok()?;
            self.graphs.put(&question.video_id, scope, &fresh).ok()?;
            Some(fresh)
        });
        let graph_store = match graphs {
            Some(g) => GraphStore::ready(g),
            None => GraphStore::lazy(
                CaptionStore::default(),
                self.backend.clone(),
                self.config.graph_settings(),
            ),
        };
        (CaptionStore::ready(captions), graph_store, frames)
    }

    pub fn sessions(&self, question: &QuestionRecord) -> Vec<AgentSession> {
        let (captions, graphs, frames) = self.stores(question);
        let mut contexts = vec![
            ModalityContext::Text(captions),
            ModalityContext::Video(VideoHandle {
                media: frames,
                backend: self.backend.clone(),
                model_id: self.config.models.vlm.clone(),
            }),
            ModalityContext::Graph(graphs),
        ];
        ModalityKind::ALL
            .into_iter()
            .zip(contexts.drain(..))
            .map(|(modality, context)| {
                let mut agent = AgentConfig::new(modality);
                agent.tool_budget = self.config.budgets.tool_budget;
                agent.tool_result_chars = self.config.budgets.tool_result_chars;
                agent.backend_id = self.config.backend.backend_id.clone();
                agent.model_id = self.config.models.agent.clone();
                AgentSession::new(agent, question.clone(), context, self.backend.clone())
                    .expect("context built per modality")
            })
            .collect()
    }

    /// Runs the configured topology on one question.
    pub fn run_question(&self, question: &QuestionRecord) -> Result<RunTrace, String> {
        run_topology(
            self.config.topology,
            question,
            self.sessions(question),
            &self.organizer(),
            &self.config.topology_settings(),
            self.executor.as_ref(),
        )
        .map_err(|e| e.to_string())
    }

    /// Runs one question, writing its trace under the output directory.
    pub fn answer(&self, question: &QuestionRecord) -> Outcome {
        let mut outcome = Outcome {
            question_id: question.id.clone(),
            category: question.category,
            gold: question.gold,
            verdict: None,
            error: None,
            trace_path: None,
        };
        match self.run_question(question) {
            Ok(trace) => {
                let rel = format!("traces/{}.jsonl", safe_file_name(&question.id));
                match write_trace(&self.config.output_dir.join(&rel), &trace, &self.digest) {
                    Ok(()) => {
                        outcome.verdict = Some(trace.verdict.final_option);
                        outcome.trace_path = Some(rel);
                    }
                    Err(e) => outcome.error = Some(format!("writing trace: {e}")),
                }
            }
            Err(e) => outcome.error = Some(e),
        }
        outcome
    }
}

fn read_ledger(path: &Path) -> Result<BTreeMap<String, Outcome>, RunError> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = std::fs::read_to_string(path).map_err(io("reading ledger"))?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        // A torn final line from an interrupted run is skipped and redone.
        if let Ok(outcome) = serde_json::from_str::<Outcome>(line) {
            done.insert(outcome.question_id.clone(), outcome);
        }
    }
    Ok(done)
}

/// Runs every question not already in the ledger, then writes the
/// per-question and aggregate results.
pub fn run_benchmark(config: &RunConfig, mode: BackendMode) -> Result<RunResult, RunError> {
    config.validate()?;
    let questions = load_dataset(&config.dataset)?;
    let backend = build_backend(config, mode, &questions)?;
    run_with_backend(config, backend, &questions)
}

pub fn run_with_backend(
    config: &RunConfig,
    backend: SharedBackend,
    questions: &[QuestionRecord],
) -> Result<RunResult, RunError> {
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(io(format!("creating {}", out.display())))?;
    let engine = Engine::new(config.clone(), backend)?;
    let ledger_path = out.join("ledger.jsonl");
    let mut done = read_ledger(&ledger_path)?;

    let pending: VecDeque<&QuestionRecord> = questions.iter().filter(|q| !done.contains_key(&q.id)).collect();
    let pending = Mutex::new(pending);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ledger_path)
        .map_err(io("opening ledger"))?;
    // Terminate a torn last line so the next record starts on its own line.
    let existing = std::fs::read(&ledger_path).map_err(io("reading ledger"))?;
    if existing.last().is_some_and(|b| *b != b'\n') {
        file.write_all(b"\n").map_err(io("writing ledger"))?;
    }
    let ledger = Mutex::new(file);
    let finished = Mutex::new(Vec::new());
    let failure: Mutex<Option<RunError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.workers {
            scope.spawn(|| loop {
                let Some(question) = pending.lock().unwrap().pop_front() else {
                    break;
                };
                let outcome = engine.answer(question);
                let mut line = serde_json::to_string(&outcome).expect("outcome serializes");
                line.push('\n');
                let committed = {
                    let mut file = ledger.lock().unwrap();
                    file.write_all(line.as_bytes()).and_then(|_| file.flush())
                };
                if let Err(e) = committed {
                    failure.lock().unwrap().get_or_insert(RunError::Io {
                        context: "writing ledger".into(),
                        source: e,
                    });
                    pending.lock().unwrap().clear();
                    break;
                }
                finished.lock().unwrap().push(outcome);
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    for outcome in finished.into_inner().unwrap() {
        done.insert(outcome.question_id.clone(), outcome);
    }

    let outcomes: Vec<Outcome> = questions.iter().filter_map(|q| done.remove(&q.id)).collect();
    write_results(out, config.topology, engine.config_digest(), outcomes)
}

fn write_results(
    out: &Path,
    topology: TopologyKind,
    digest: &str,
    outcomes: Vec<Outcome>,
) -> Result<RunResult, RunError> {
    let mut lines = String::new();
    for o in &outcomes {
        lines.push_str(&serde_json::to_string(&QuestionResult::from(o.clone())).expect("serializes"));
        lines.push('\n');
    }
    std::fs::write(out.join("outcomes.jsonl"), lines).map_err(io("writing outcomes"))?;
    let aggregate = if outcomes.iter().all(|o| o.gold.is_some()) {
        score(&outcomes).ok()
    } else {
        None
    };
    let result = RunResult {
        topology,
        config_digest: digest.to_string(),
        questions: outcomes.len(),
        errors: outcomes.iter().filter(|o| !o.answered()).count(),
        aggregate,
        outcomes,
    };
    let json = serde_json::to_string_pretty(&result).expect("serializes");
    std::fs::write(out.join("results.json"), json + "\n").map_err(io("writing results"))?;
    Ok(result)
}

/// Reads `outcomes.jsonl` back.
pub fn read_outcomes(path: &Path) -> Result<Vec<Outcome>, RunError> {
    let text = std::fs::read_to_string(path).map_err(io(format!("reading {}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<QuestionResult>(l)
                .map(|r| r.outcome)
                .map_err(|e| RunError::Setup(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// `outcomes.jsonl` inside a run directory, or the file itself.
pub fn outcomes_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("outcomes.jsonl")
    } else {
        path.to_path_buf()
    }
}

//! Run configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vma_core::agents::{DEFAULT_TOOL_BUDGET, DEFAULT_TOOL_RESULT_CHARS};
use vma_core::captioning::{CaptionSettings, DEFAULT_OVERLAP, DEFAULT_WINDOW_SIZE};
use vma_core::digest::sha256_hex;
use vma_core::organizer::{default_category_table, CategoryTable, ModalityRanking};
use vma_core::scenegraph::{GraphSettings, DEFAULT_CHUNK_THRESHOLD};
use vma_core::topology::{TopologyKind, TopologySettings, DEFAULT_DEBATE_ORDER, DEFAULT_MAX_EXCHANGES};
use vma_core::types::{CategoryCode, ModalityKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrganizerKind {
    #[default]
    Model,
    Majority,
    BestCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionMode {
    #[default]
    Guided,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub tool_budget: u32,
    pub tool_result_chars: usize,
    pub max_exchanges: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            tool_budget: DEFAULT_TOOL_BUDGET,
            tool_result_chars: DEFAULT_TOOL_RESULT_CHARS,
            max_exchanges: DEFAULT_MAX_EXCHANGES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionerConfig {
    pub mode: CaptionMode,
    pub window_size: u32,
    pub overlap: u32,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        CaptionerConfig {
            mode: CaptionMode::Guided,
            window_size: DEFAULT_WINDOW_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGraphConfig {
    pub threshold: f64,
}

impl Default for SceneGraphConfig {
    fn default() -> Self {
        SceneGraphConfig {
            threshold: DEFAULT_CHUNK_THRESHOLD,
        }
    }
}

/// Model names sent for each role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub agent: String,
    pub organizer: String,
    pub captioner: String,
    pub vlm: String,
    pub scene_graph: String,
}

impl Default for Models {
    fn default() -> Self {
        Models {
            agent: "agent".into(),
            organizer: "organizer".into(),
            captioner: "captioner".into(),
            vlm: "vlm".into(),
            scene_graph: "scene-graph".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Chat-completions endpoint.
    Remote,
    /// Offline deterministic stand-in seeded by `seed`.
    #[default]
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    /// Falls back to the VMA_ENDPOINT environment variable.
    pub endpoint: Option<String>,
    pub cassette: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            backend_id: "default".into(),
            kind: BackendKind::Simulated,
            endpoint: None,
            cassette: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub topology: TopologyKind,
    pub dataset: PathBuf,
    pub frames_root: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Questions run concurrently.
    #[serde(default = "one")]
    pub workers: usize,
    /// Run the Report round's agents on separate threads.
    #[serde(default)]
    pub parallel_agents: bool,
    #[serde(default)]
    pub organizer: OrganizerKind,
    #[serde(default)]
    pub ranking: ModalityRanking,
    /// Replaces the built-in category table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_table: Option<BTreeMap<CategoryCode, ModalityKind>>,
    #[serde(default = "default_order")]
    pub debate_order: Vec<ModalityKind>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub captioner: CaptionerConfig,
    #[serde(default)]
    pub scene_graph: SceneGraphConfig,
    #[serde(default)]
    pub models: Models,
    #[serde(default)]
    pub backend: BackendConfig,
}

fn one() -> usize {
    1
}

fn default_order() -> Vec<ModalityKind> {
    DEFAULT_DEBATE_ORDER.to_vec()
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field} path does not exist: {path}")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.dataset);
        resolve(&mut self.frames_root);
        resolve(&mut self.output_dir);
        if let Some(c) = self.backend.cassette.as_mut() {
            resolve(c);
        }
    }

    /// Checks value ranges and that input paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, path) in [("dataset", &self.dataset), ("frames_root", &self.frames_root)] {
            if !path.exists() {
                return Err(ConfigError::MissingPath {
                    field,
                    path: path.clone(),
                });
            }
        }
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.workers == 0 {
            return invalid("workers must be at least 1");
        }
        if self.budgets.tool_budget == 0 {
            return invalid("budgets.tool_budget must be at least 1");
        }
        if self.budgets.max_exchanges == 0 {
            return invalid("budgets.max_exchanges must be at least 1");
        }
        let mut order = self.debate_order.clone();
        order.sort();
        order.dedup();
        if order.len() != 3 || self.debate_order.len() != 3 {
            return invalid("debate_order must list text, video and graph once each");
        }
        if self.captioner.window_size < 2 || self.captioner.overlap >= self.captioner.window_size {
            return invalid("captioner.window_size must be >= 2 and greater than captioner.overlap");
        }
        self.category_table().map(|_| ())
    }

    pub fn category_table(&self) -> Result<CategoryTable, ConfigError> {
        match &self.category_table {
            None => Ok(default_category_table()),
            Some(map) => {
                CategoryTable::new(map.clone()).map_err(|e| ConfigError::Invalid(format!("category_table: {e}")))
            }
        }
    }

    pub fn caption_settings(&self) -> CaptionSettings {
        CaptionSettings {
            model_id: self.models.captioner.clone(),
            guided: self.captioner.mode == CaptionMode::Guided,
            window_size: self.captioner.window_size,
            overlap: self.captioner.overlap,
        }
    }

    pub fn graph_settings(&self) -> GraphSettings {
        GraphSettings {
            model_id: self.models.scene_graph.clone(),
            threshold: self.scene_graph.threshold,
        }
    }

    pub fn topology_settings(&self) -> TopologySettings {
        TopologySettings {
            max_exchanges: self.budgets.max_exchanges,
            debate_order: self.debate_order.clone(),
        }
    }

    /// Digest of everything that can change answers. Paths and scheduling
    /// knobs are left out so the same experiment hashes the same anywhere.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.dataset = c.dataset.file_name().map(PathBuf::from).unwrap_or_default();
        c.frames_root = PathBuf::new();
        c.output_dir = PathBuf::new();
        c.backend.cassette = None;
        c.backend.endpoint = None;
        c.workers = 1;
        c.parallel_agents = false;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
topology = "report"
dataset = "data.json"
frames_root = "frames"
output_dir = "out"
"#;

    #[test]
    fn defaults_fill_in() {
        let c: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(c.workers, 1);
        assert_eq!(c.organizer, OrganizerKind::Model);
        assert_eq!(c.budgets.tool_budget, 5);
        assert_eq!(c.budgets.max_exchanges, 8);
        assert_eq!(c.captioner.window_size, 5);
        assert_eq!(c.debate_order, DEFAULT_DEBATE_ORDER);
        assert_eq!(c.ranking, ModalityRanking::default());
    }

    #[test]
    fn overrides_parse() {
        let text = format!(
            "{MINIMAL}organizer = \"best_category\"\nranking = [\"text\", \"video\", \"graph\"]\n\
             [category_table]\nCH = \"graph\"\nCW = \"video\"\nDC = \"video\"\nDL = \"text\"\n\
             DO = \"video\"\nTC = \"text\"\nTN = \"video\"\nTP = \"text\"\n"
        );
        let c: RunConfig = toml::from_str(&text).unwrap();
        let table = c.category_table().unwrap();
        assert_eq!(table.get(CategoryCode::CausalHow), Some(ModalityKind::Graph));
    }

    #[test]
    fn missing_paths_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.dataset, dir.path().join("data.json"));
        assert!(matches!(
            c.validate(),
            Err(ConfigError::MissingPath { field: "dataset", .. })
        ));

        std::fs::write(dir.path().join("data.json"), "[]").unwrap();
        std::fs::create_dir(dir.path().join("frames")).unwrap();
        let mut c = RunConfig::load(&path).unwrap();
        c.validate().unwrap();
        c.debate_order = vec![ModalityKind::Text; 3];
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn digest_ignores_location() {
        let mut a: RunConfig = toml::from_str(MINIMAL).unwrap();
        let mut b = a.clone();
        a.resolve_paths(Path::new("/one"));
        b.resolve_paths(Path::new("/two"));
        b.workers = 4;
        assert_eq!(a.digest(), b.digest());
        b.seed = 9;
        assert_ne!(a.digest(), b.digest());
    }
}

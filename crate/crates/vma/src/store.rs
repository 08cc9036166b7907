//! JSONL caches for captions and scene graphs, keyed by video and by the
//! question the captions were guided by ("generic" when unguided).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vma_core::captioning::Caption;
use vma_core::scenegraph::SceneGraph;

pub const GENERIC_SCOPE: &str = "generic";

#[derive(Serialize, Deserialize)]
struct StoreLine<T> {
    video_id: String,
    question_id: String,
    #[serde(flatten)]
    item: T,
}

type Key = (String, String);

/// Append-only cache of item lists. Each list is written in one append.
pub struct JsonlStore<T> {
    path: PathBuf,
    entries: Mutex<BTreeMap<Key, Vec<T>>>,
    _item: PhantomData<fn() -> T>,
}

pub type CaptionCache = JsonlStore<Caption>;
pub type GraphCache = JsonlStore<SceneGraph>;

impl<T: Serialize + DeserializeOwned + Clone> JsonlStore<T> {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries: BTreeMap<Key, Vec<T>> = BTreeMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: StoreLine<T> = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{} line {}: {e}", path.display(), i + 1),
                    )
                })?;
                let key = (parsed.video_id, parsed.question_id);
                entries.entry(key).or_default().push(parsed.item);
            }
        }
        Ok(JsonlStore {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
            _item: PhantomData,
        })
    }

    pub fn get(&self, video_id: &str, scope: &str) -> Option<Vec<T>> {
        self.entries
            .lock()
            .unwrap()
            .get(&(video_id.to_string(), scope.to_string()))
            .cloned()
    }

    /// Stores `items` unless the key is already cached.
    pub fn put(&self, video_id: &str, scope: &str, items: &[T]) -> std::io::Result<()> {
        let key = (video_id.to_string(), scope.to_string());
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        let mut block = String::new();
        for item in items {
            let line = StoreLine {
                video_id: video_id.to_string(),
                question_id: scope.to_string(),
                item,
            };
            block.push_str(&serde_json::to_string(&line).map_err(std::io::Error::other)?);
            block.push('\n');
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.write_all(block.as_bytes())?;
        file.flush()?;
        entries.insert(key, items.to_vec());
        Ok(())
    }
}

//! Replay cache and the recording wrapper that fills it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{prompt_digest, LogprobBackend, TopKDistribution};
use crate::error::{Error, Result};
use crate::fsutil;

/// On-disk map from prompt digest to the recorded response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayStore {
    entries: BTreeMap<String, TopKDistribution>,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self> {
        let store: Self = fsutil::read_json(path)?;
        for (digest, dist) in &store.entries {
            dist.validate()
                .map_err(|e| Error::Protocol(format!("replay entry {digest}: {e}")))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json_atomic(path, self)
    }

    pub fn get(&self, prompt: &str, k: usize) -> Option<&TopKDistribution> {
        self.entries.get(&prompt_digest(prompt, k))
    }

    pub fn insert(&mut self, prompt: &str, k: usize, dist: TopKDistribution) {
        self.entries.insert(prompt_digest(prompt, k), dist);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Read-only backend answering from a [`ReplayStore`].
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            store: ReplayStore::load(path)?,
        })
    }

    pub fn from_store(store: ReplayStore) -> Self {
        Self { store }
    }
}

impl LogprobBackend for ReplayBackend {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        self.store.get(prompt, k).cloned().ok_or_else(|| Error::CacheMiss {
            digest: prompt_digest(prompt, k),
        })
    }
}

const FLUSH_EVERY: usize = 64;

struct RecordState {
    store: ReplayStore,
    unsaved: usize,
}

/// Forwards queries to a live backend and persists every response.
///
/// Previously recorded prompts are answered from the store without reaching
/// the inner backend. Writes go through a single lock and are flushed
/// atomically every few responses and on drop.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    state: Mutex<RecordState>,
}

impl<B: LogprobBackend> RecordingBackend<B> {
    /// Opens (or starts) the replay file at `path`.
    pub fn open(inner: B, path: &Path) -> Result<Self> {
        let store = if path.exists() {
            ReplayStore::load(path)?
        } else {
            ReplayStore::default()
        };
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            state: Mutex::new(RecordState { store, unsaved: 0 }),
        })
    }

    pub fn flush(&self) -> Result<()> {
        let mut state = self.state.lock();
        if state.unsaved > 0 {
            state.store.save(&self.path)?;
            state.unsaved = 0;
        }
        Ok(())
    }

    pub fn recorded(&self) -> usize {
        self.state.lock().store.len()
    }
}

impl<B: LogprobBackend> LogprobBackend for RecordingBackend<B> {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        if let Some(hit) = self.state.lock().store.get(prompt, k) {
            return Ok(hit.clone());
        }
        let dist = self.inner.query(prompt, k)?;
        let mut state = self.state.lock();
        state.store.insert(prompt, k, dist.clone());
        state.unsaved += 1;
        if state.unsaved >= FLUSH_EVERY {
            state.store.save(&self.path)?;
            state.unsaved = 0;
        }
        Ok(dist)
    }
}

impl<B> Drop for RecordingBackend<B> {
    fn drop(&mut self) {
        let state = self.state.get_mut();
        if state.unsaved > 0 {
            if let Err(e) = state.store.save(&self.path) {
                log::error!("failed to flush replay cache {}: {e}", self.path.display());
            }
        }
    }
}

//! Per-metric attribution caches sharing one index manifest.
//!
//! The first run records the selected test indices in the manifest. Every
//! later run, whatever its metric, must request exactly that index set, so
//! rankings from different metrics always describe the same instances.
//! Each cache file carries a fingerprint of everything that shapes prompts
//! and scores; a file written under a different configuration is rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{AttributionResult, Metric, SamplingConfig};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tabular::PromptTemplate;
use crate::verbalizer::VerbalizerMap;

pub const DEFAULT_MANIFEST_NAME: &str = "index_manifest.json";

/// Where the manifest and per-metric cache files live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheLayout {
    pub dir: PathBuf,
    pub manifest_name: String,
    /// File names by metric; defaults to `attribution_cache_<metric>.json`.
    pub file_names: BTreeMap<Metric, String>,
}

impl CacheLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            manifest_name: DEFAULT_MANIFEST_NAME.to_string(),
            file_names: Metric::ALL
                .iter()
                .map(|m| (*m, format!("attribution_cache_{m}.json")))
                .collect(),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(&self.manifest_name)
    }

    pub fn cache_path(&self, metric: Metric) -> PathBuf {
        self.dir.join(&self.file_names[&metric])
    }

    pub fn read_manifest(&self) -> Result<Option<IndexManifest>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        fsutil::read_json(&path).map(Some)
    }

    /// Reads a metric's cache file, if present, without computing anything.
    pub fn read_cache(&self, metric: Metric) -> Result<Option<AttributionCache>> {
        let path = self.cache_path(metric);
        if !path.exists() {
            return Ok(None);
        }
        let cache: AttributionCache = fsutil::read_json(&path)?;
        if cache.metric != metric {
            return Err(Error::Contract(format!(
                "{} holds {} results, expected {metric}",
                path.display(),
                cache.metric
            )));
        }
        cache.check_entries(&path)?;
        Ok(Some(cache))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub selected_test_indices: Vec<usize>,
    /// Seed used to choose the indices, when they were sampled.
    pub seed: Option<u64>,
    pub created_by: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionCache {
    pub metric: Metric,
    pub selected_test_indices: Vec<usize>,
    pub fingerprint: String,
    pub entries: BTreeMap<usize, AttributionResult>,
}

impl AttributionCache {
    fn check_entries(&self, path: &Path) -> Result<()> {
        let selected: BTreeSet<usize> = self.selected_test_indices.iter().copied().collect();
        for (idx, r) in &self.entries {
            if !selected.contains(idx) || r.instance_index != *idx || r.metric != self.metric {
                return Err(Error::Contract(format!(
                    "{}: entry {idx} is inconsistent with the cache header",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Entries in selection order.
    pub fn results(&self) -> Vec<AttributionResult> {
        self.selected_test_indices
            .iter()
            .filter_map(|i| self.entries.get(i).cloned())
            .collect()
    }
}

/// Hash of the settings that change prompts or scores.
///
/// `extra` lets callers fold in backend identity or anything else relevant.
pub fn config_fingerprint(
    config: &SamplingConfig,
    template: &PromptTemplate,
    vmap: &VerbalizerMap,
    extra: &serde_json::Value,
) -> String {
    let doc = serde_json::json!({
        "sampling": config,
        "template": template,
        "verbalizer": vmap,
        "extra": extra,
    });
    let bytes = serde_json::to_vec(&doc).expect("fingerprint document serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug)]
pub struct InstanceFailure {
    pub index: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct CacheOutcome {
    /// Available results in selection order.
    pub results: Vec<AttributionResult>,
    /// Number of results computed in this call.
    pub computed: usize,
    pub failures: Vec<InstanceFailure>,
    pub cache_path: PathBuf,
}

/// Returns cached results for `indices`, computing and persisting any missing ones.
///
/// Fails with [`Error::IndexSetMismatch`] when `indices` differs (as a set)
/// from the manifest's selection, and with [`Error::StaleCache`] when the
/// metric's cache was written under another fingerprint. Instance-level
/// compute errors are collected in the outcome rather than aborting the batch.
pub fn load_or_compute<F>(
    layout: &CacheLayout,
    indices: &[usize],
    metric: Metric,
    fingerprint: &str,
    selection_seed: Option<u64>,
    mut compute: F,
) -> Result<CacheOutcome>
where
    F: FnMut(usize) -> Result<AttributionResult>,
{
    if indices.is_empty() {
        return Err(Error::Contract("no instance indices requested".into()));
    }
    let requested: BTreeSet<usize> = indices.iter().copied().collect();
    if requested.len() != indices.len() {
        return Err(Error::Contract("requested indices contain duplicates".into()));
    }

    let selected = match layout.read_manifest()? {
        Some(manifest) => {
            let recorded: BTreeSet<usize> =
                manifest.selected_test_indices.iter().copied().collect();
            if recorded != requested {
                return Err(Error::IndexSetMismatch {
                    requested: indices.to_vec(),
                    recorded: manifest.selected_test_indices,
                });
            }
            manifest.selected_test_indices
        }
        None => {
            let manifest = IndexManifest {
                selected_test_indices: indices.to_vec(),
                seed: selection_seed,
                created_by: metric,
            };
            fsutil::write_json_atomic(&layout.manifest_path(), &manifest)?;
            manifest.selected_test_indices
        }
    };

    let path = layout.cache_path(metric);
    let mut cache = match layout.read_cache(metric)? {
        Some(cache) => {
            if cache.fingerprint != fingerprint {
                return Err(Error::StaleCache {
                    path,
                    expected: fingerprint.to_string(),
                    found: cache.fingerprint,
                });
            }
            cache
        }
        None => AttributionCache {
            metric,
            selected_test_indices: selected.clone(),
            fingerprint: fingerprint.to_string(),
            entries: BTreeMap::new(),
        },
    };
    cache.selected_test_indices = selected.clone();

    let mut computed = 0;
    let mut failures = Vec::new();
    for &idx in &selected {
        if cache.entries.contains_key(&idx) {
            continue;
        }
        match compute(idx) {
            Ok(r) if r.instance_index == idx && r.metric == metric => {
                cache.entries.insert(idx, r);
                computed += 1;
            }
            Ok(r) => failures.push(InstanceFailure {
                index: idx,
                error: Error::Contract(format!(
                    "compute returned instance {} / {} for {idx} / {metric}",
                    r.instance_index, r.metric
                )),
            }),
            Err(error) => failures.push(InstanceFailure { index: idx, error }),
        }
    }
    if computed > 0 {
        fsutil::write_json_atomic(&path, &cache)?;
    }

    Ok(CacheOutcome {
        results: cache.results(),
        computed,
        failures,
        cache_path: path,
    })
}

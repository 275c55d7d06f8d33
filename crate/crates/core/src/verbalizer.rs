//! Class aggregation over top-k tokens.
//!
//! Each class owns a set of surface forms. The probability of every top-k
//! token whose canonical form falls in a class's set is summed into that
//! class, and the class masses are then renormalized.

use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::TopKDistribution;
use crate::error::{Error, Result};
use crate::fsutil;

/// Tolerance on the total of a [`ClassDistribution`].
pub const DIST_TOLERANCE: f64 = 1e-9;

/// Strips surrounding whitespace and lowercases.
pub fn canonicalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

/// Ordered classes and the canonical surface forms counted for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, Vec<String>>", into = "IndexMap<String, Vec<String>>")]
pub struct VerbalizerMap {
    classes: Vec<String>,
    surface_sets: Vec<BTreeSet<String>>,
}

impl VerbalizerMap {
    pub fn new(map: IndexMap<String, Vec<String>>) -> Result<Self> {
        if map.len() < 2 {
            return Err(Error::Verbalizer("at least two classes are required".into()));
        }
        let mut classes = Vec::with_capacity(map.len());
        let mut surface_sets: Vec<BTreeSet<String>> = Vec::with_capacity(map.len());
        for (class, forms) in map {
            let set: BTreeSet<String> = forms
                .iter()
                .map(|f| canonicalize_token(f))
                .filter(|f| !f.is_empty())
                .collect();
            if set.is_empty() {
                return Err(Error::Verbalizer(format!(
                    "class `{class}` has no non-empty surface forms"
                )));
            }
            for (other, other_set) in classes.iter().zip(&surface_sets) {
                if let Some(shared) = set.intersection(other_set).next() {
                    return Err(Error::Verbalizer(format!(
                        "surface form `{shared}` is shared by classes `{other}` and `{class}`"
                    )));
                }
            }
            classes.push(class);
            surface_sets.push(set);
        }
        Ok(Self {
            classes,
            surface_sets,
        })
    }

    /// A two-class yes/no map.
    pub fn yes_no() -> Self {
        let mut m = IndexMap::new();
        m.insert("yes".to_string(), vec!["yes".to_string()]);
        m.insert("no".to_string(), vec!["no".to_string()]);
        Self::new(m).expect("static map is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, token: &str) -> Option<usize> {
        let canon = canonicalize_token(token);
        self.surface_sets.iter().position(|s| s.contains(&canon))
    }
}

impl TryFrom<IndexMap<String, Vec<String>>> for VerbalizerMap {
    type Error = Error;
    fn try_from(map: IndexMap<String, Vec<String>>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<VerbalizerMap> for IndexMap<String, Vec<String>> {
    fn from(v: VerbalizerMap) -> Self {
        v.classes
            .into_iter()
            .zip(v.surface_sets)
            .map(|(c, s)| (c, s.into_iter().collect()))
            .collect()
    }
}

/// Normalized probabilities aligned with a verbalizer's classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("class distribution is empty".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Contract(format!(
                "class probabilities must lie in [0, 1]: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_TOLERANCE {
            return Err(Error::Contract(format!(
                "class probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Raw per-class mass: the summed probability of matching top-k tokens.
pub fn aggregate_raw(topk: &TopKDistribution, vmap: &VerbalizerMap) -> Vec<f64> {
    let mut raw = vec![0.0; vmap.num_classes()];
    for entry in topk.entries() {
        if let Some(c) = vmap.class_of(&entry.token) {
            raw[c] += entry.logprob.exp();
        }
    }
    raw
}

/// Normalizes raw class masses.
///
/// Returns the distribution and a degeneracy flag, set when no mass was
/// found and the uniform distribution was substituted.
pub fn normalize_classes(raw: &[f64]) -> Result<(ClassDistribution, bool)> {
    if raw.is_empty() {
        return Err(Error::Contract("no class masses".into()));
    }
    if raw.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Contract(format!("raw masses must be finite and >= 0: {raw:?}")));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok((ClassDistribution::uniform(raw.len()), true));
    }
    let probs = raw.iter().map(|r| (r / total).min(1.0)).collect();
    Ok((ClassDistribution { probs }, false))
}

/// Full top-k to class pipeline.
pub fn class_distribution(
    topk: &TopKDistribution,
    vmap: &VerbalizerMap,
) -> Result<(ClassDistribution, bool)> {
    normalize_classes(&aggregate_raw(topk, vmap))
}

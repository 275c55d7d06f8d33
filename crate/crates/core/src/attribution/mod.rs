//! Sampled-coalition attribution.
//!
//! For one instance: query the full prompt once, then every coalition in the
//! leave-one-out set plus a seeded random sample of the powerset. Each
//! coalition's class distribution is scored by its similarity to the full
//! distribution. A feature's raw score is the mean similarity of coalitions
//! that contain it minus the mean of those that do not. Scores are shifted by
//! their minimum and normalized to sum to one.

mod coalition;
mod divergence;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::LogprobBackend;
use crate::error::{Error, Result};
use crate::tabular::{build_prompt, PromptTemplate, TabularInstance};
use crate::verbalizer::{class_distribution, ClassDistribution, VerbalizerMap};

pub use coalition::{essential_coalitions, extra_count, sample_extra, Coalition, MAX_FEATURES};
pub use divergence::{jsd_nat, kl_nat, l1, similarity, Metric, KL_EPSILON};

/// Sampling and scoring parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Fraction of the non-essential powerset to draw, in `(0, 1]`.
    pub ratio: f64,
    /// Cap on the total number of coalitions, leave-one-out included.
    pub max_coalitions: usize,
    pub seed: u64,
    pub metric: Metric,
    pub top_k: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            ratio: 0.4,
            max_coalitions: 800,
            seed: 0,
            metric: Metric::Jsd,
            top_k: 10,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio {} is outside (0, 1]", self.ratio)));
        }
        if self.max_coalitions == 0 {
            return Err(Error::Config("max_coalitions must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        Ok(())
    }

    /// Checks the config against an instance with `m` features.
    pub fn validate_for(&self, m: usize) -> Result<()> {
        self.validate()?;
        if self.max_coalitions < m {
            return Err(Error::Config(format!(
                "max_coalitions ({}) must be at least the feature count ({m})",
                self.max_coalitions
            )));
        }
        Ok(())
    }

    /// Sampler seed for one instance, so instances do not share coalition draws.
    pub fn instance_seed(&self, index: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(index as u64))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionRecord {
    pub coalition: Coalition,
    pub class_dist: ClassDistribution,
    pub similarity: f64,
    /// No top-k token matched any class; `class_dist` is the uniform fallback.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegeneracyFlags {
    /// The full prompt produced no class mass.
    pub full_distribution: bool,
    /// Coalitions whose prompts produced no class mass.
    pub degenerate_coalitions: usize,
    /// All raw scores were equal and `phi` fell back to uniform.
    pub uniform_phi: bool,
}

impl DegeneracyFlags {
    pub fn any(&self) -> bool {
        self.full_distribution || self.degenerate_coalitions > 0 || self.uniform_phi
    }
}

/// Attribution for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub instance_index: usize,
    pub metric: Metric,
    /// Normalized scores keyed by feature, in instance field order.
    pub phi: IndexMap<String, f64>,
    /// `with_j - without_j` before shifting and normalization.
    pub raw_phi: Vec<f64>,
    pub seed: u64,
    pub degeneracy_flags: DegeneracyFlags,
    pub coalition_count: usize,
    pub full_dist: ClassDistribution,
    pub records: Vec<CoalitionRecord>,
    pub config: SamplingConfig,
}

impl AttributionResult {
    pub fn feature_keys(&self) -> impl Iterator<Item = &str> {
        self.phi.keys().map(String::as_str)
    }

    pub fn phi_values(&self) -> Vec<f64> {
        self.phi.values().copied().collect()
    }

    /// Feature keys from most to least important; ties keep field order.
    pub fn ranked_keys(&self) -> Vec<String> {
        let mut order: Vec<(usize, &String, f64)> = self
            .phi
            .iter()
            .enumerate()
            .map(|(i, (k, v))| (i, k, *v))
            .collect();
        order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        order.into_iter().map(|(_, k, _)| k.clone()).collect()
    }

    /// Compact view used for per-instance output files.
    pub fn summary(&self) -> AttributionSummary<'_> {
        AttributionSummary {
            instance_index: self.instance_index,
            metric: self.metric,
            phi: &self.phi,
            raw_phi: &self.raw_phi,
            seed: self.seed,
            degeneracy_flags: &self.degeneracy_flags,
            coalition_count: self.coalition_count,
        }
    }
}

/// Per-instance output record: scores keyed by feature plus run metadata.
#[derive(Debug, Serialize)]
pub struct AttributionSummary<'a> {
    pub instance_index: usize,
    pub metric: Metric,
    pub phi: &'a IndexMap<String, f64>,
    pub raw_phi: &'a [f64],
    pub seed: u64,
    pub degeneracy_flags: &'a DegeneracyFlags,
    pub coalition_count: usize,
}

/// Shifts by the minimum and normalizes to sum to one.
///
/// Returns the scores and a flag set when every raw score was equal, in
/// which case the uniform vector is returned.
pub fn normalize_phi(raw: &[f64]) -> Result<(Vec<f64>, bool)> {
    if raw.len() < 2 {
        return Err(Error::Contract("normalize_phi needs at least two scores".into()));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract(format!("non-finite raw scores: {raw:?}")));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = raw.iter().map(|x| x - min).collect();
    let total: f64 = shifted.iter().sum();
    if total <= 0.0 {
        return Ok((vec![1.0 / raw.len() as f64; raw.len()], true));
    }
    Ok((shifted.into_iter().map(|x| x / total).collect(), false))
}

/// Mean similarity with and without each feature, over the given records.
///
/// Returns `with_j - without_j` for every `j < m`. Both means must be defined.
pub fn with_without(records: &[CoalitionRecord], m: usize) -> Result<Vec<f64>> {
    let mut with_sum = vec![0.0; m];
    let mut with_n = vec![0usize; m];
    let mut without_sum = vec![0.0; m];
    let mut without_n = vec![0usize; m];
    for r in records {
        for j in 0..m {
            if r.coalition.contains(j) {
                with_sum[j] += r.similarity;
                with_n[j] += 1;
            } else {
                without_sum[j] += r.similarity;
                without_n[j] += 1;
            }
        }
    }
    (0..m)
        .map(|j| {
            if with_n[j] == 0 || without_n[j] == 0 {
                return Err(Error::Contract(format!(
                    "feature {j} is not covered both ways by the coalition set"
                )));
            }
            Ok(with_sum[j] / with_n[j] as f64 - without_sum[j] / without_n[j] as f64)
        })
        .collect()
}

/// Runs the full attribution procedure for one instance.
pub fn compute_attributions<B: LogprobBackend + ?Sized>(
    instance: &TabularInstance,
    backend: &B,
    template: &PromptTemplate,
    vmap: &VerbalizerMap,
    config: &SamplingConfig,
) -> Result<AttributionResult> {
    let m = instance.len();
    let wrap = |e| Error::for_instance(instance.index, e);
    config.validate_for(m).map_err(wrap)?;
    let essential = essential_coalitions(m).map_err(wrap)?;
    let extra = sample_extra(
        m,
        config.ratio,
        config.max_coalitions,
        config.instance_seed(instance.index),
        &essential,
    )
    .map_err(wrap)?;
    let mut coalitions = essential;
    coalitions.extend(extra);
    evaluate_coalitions(instance, &coalitions, backend, template, vmap, config)
}

/// Scores an explicit coalition set.
///
/// Every feature must be both present in and absent from at least one
/// coalition. Evaluations run in parallel; the reduction is done in
/// coalition order afterwards so the result does not depend on scheduling.
pub fn evaluate_coalitions<B: LogprobBackend + ?Sized>(
    instance: &TabularInstance,
    coalitions: &[Coalition],
    backend: &B,
    template: &PromptTemplate,
    vmap: &VerbalizerMap,
    config: &SamplingConfig,
) -> Result<AttributionResult> {
    let m = instance.len();
    let wrap = |e| Error::for_instance(instance.index, e);
    if m < 2 {
        return Err(wrap(Error::Contract(format!(
            "attribution needs at least 2 features, got {m}"
        ))));
    }
    if m > MAX_FEATURES {
        return Err(wrap(Error::Contract(format!("too many features: {m}"))));
    }
    if let Some(c) = coalitions.iter().find(|c| !c.fits(m)) {
        return Err(wrap(Error::Contract(format!("coalition {c:?} exceeds {m} features"))));
    }

    let query_dist = |c: Coalition| -> Result<(ClassDistribution, bool)> {
        let prompt = build_prompt(template, &instance.select(|i| c.contains(i)))?;
        let topk = backend.query(&prompt, config.top_k)?;
        class_distribution(&topk, vmap)
    };

    let full = Coalition::full(m);
    let (full_dist, full_degenerate) = query_dist(full).map_err(wrap)?;

    let records = coalitions
        .par_iter()
        .map(|&c| {
            let (class_dist, degenerate) = if c == full {
                (full_dist.clone(), full_degenerate)
            } else {
                query_dist(c)?
            };
            let similarity = similarity(config.metric, &full_dist, &class_dist)?;
            Ok(CoalitionRecord {
                coalition: c,
                class_dist,
                similarity,
                degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;

    let raw_phi = with_without(&records, m).map_err(wrap)?;
    let (phi, uniform_phi) = normalize_phi(&raw_phi).map_err(wrap)?;

    Ok(AttributionResult {
        instance_index: instance.index,
        metric: config.metric,
        phi: instance.keys().map(str::to_string).zip(phi).collect(),
        raw_phi,
        seed: config.seed,
        degeneracy_flags: DegeneracyFlags {
            full_distribution: full_degenerate,
            degenerate_coalitions: records.iter().filter(|r| r.degenerate).count(),
            uniform_phi,
        },
        coalition_count: records.len(),
        full_dist,
        records,
        config: config.clone(),
    })
}

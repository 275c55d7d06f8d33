//! Deletion-curve faithfulness.
//!
//! Fields are removed from the prompt one at a time in ranked order and the
//! probability of the class predicted on the full prompt is tracked. A
//! ranking that puts truly influential features first drives this curve down
//! faster, so a lower area under the curve means a more faithful ranking.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::Metric;
use crate::backend::LogprobBackend;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tabular::{build_prompt, PromptTemplate, TabularInstance};
use crate::verbalizer::{class_distribution, ClassDistribution, VerbalizerMap};

/// Default number of sequential removals per curve.
pub const DEFAULT_MAX_REMOVALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingSource {
    Jsd,
    Kl,
    L1,
    External,
    Random,
}

impl RankingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Jsd => "jsd",
            Self::Kl => "kl",
            Self::L1 => "l1",
            Self::External => "external",
            Self::Random => "random",
        }
    }

    pub fn metric(self) -> Option<Metric> {
        match self {
            Self::Jsd => Some(Metric::Jsd),
            Self::Kl => Some(Metric::Kl),
            Self::L1 => Some(Metric::L1),
            _ => None,
        }
    }
}

impl From<Metric> for RankingSource {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Jsd => Self::Jsd,
            Metric::Kl => Self::Kl,
            Metric::L1 => Self::L1,
        }
    }
}

impl fmt::Display for RankingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RankingSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsd" => Ok(Self::Jsd),
            "kl" => Ok(Self::Kl),
            "l1" => Ok(Self::L1),
            "external" => Ok(Self::External),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown ranking source `{other}`"))),
        }
    }
}

/// Feature keys of one instance, most important first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingOrder {
    pub instance_index: usize,
    pub source: RankingSource,
    pub keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Argmax of a class distribution; ties go to the lowest index and are flagged.
pub fn predicted_class(full_dist: &ClassDistribution) -> (usize, bool) {
    let probs = full_dist.probs();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    let tie = probs
        .iter()
        .enumerate()
        .any(|(i, &p)| i != best && p == probs[best]);
    (best, tie)
}

/// Seeded uniform permutation of the instance's keys.
pub fn random_order(instance: &TabularInstance, seed: u64) -> RankingOrder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (instance.index as u64).rotate_left(32));
    let mut keys: Vec<String> = instance.keys().map(str::to_string).collect();
    keys.shuffle(&mut rng);
    RankingOrder {
        instance_index: instance.index,
        source: RankingSource::Random,
        keys,
        seed: Some(seed),
    }
}

/// Externally produced ranking, as read from `{global: [...]}` or
/// `{per_instance: {index: [...]}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalRanking {
    Global(Vec<String>),
    PerInstance(BTreeMap<usize, Vec<String>>),
}

impl ExternalRanking {
    /// Orders for each instance; global rankings are broadcast unchanged.
    pub fn orders_for(&self, instances: &[TabularInstance]) -> Result<Vec<RankingOrder>> {
        instances
            .iter()
            .map(|inst| {
                let keys = match self {
                    Self::Global(keys) => keys.clone(),
                    Self::PerInstance(map) => map.get(&inst.index).cloned().ok_or_else(|| {
                        Error::Ranking(format!(
                            "external ranking has no entry for instance {}",
                            inst.index
                        ))
                    })?,
                };
                for k in &keys {
                    if inst.position(k).is_none() {
                        return Err(Error::Ranking(format!(
                            "external ranking key `{k}` is not a feature of instance {}",
                            inst.index
                        )));
                    }
                }
                Ok(RankingOrder {
                    instance_index: inst.index,
                    source: RankingSource::External,
                    keys,
                    seed: None,
                })
            })
            .collect()
    }

    pub fn global(&self) -> Option<&[String]> {
        match self {
            Self::Global(keys) => Some(keys),
            Self::PerInstance(_) => None,
        }
    }
}

/// Loads and validates an external ranking against the dataset's feature keys.
pub fn load_external_ranking(path: &Path, feature_keys: &[String]) -> Result<ExternalRanking> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::Ranking(format!("{} is empty", path.display())));
    }
    let ranking: ExternalRanking = fsutil::read_json(path)?;
    let lists: Vec<&Vec<String>> = match &ranking {
        ExternalRanking::Global(keys) => vec![keys],
        ExternalRanking::PerInstance(map) => {
            if map.is_empty() {
                return Err(Error::Ranking(format!("{} lists no instances", path.display())));
            }
            map.values().collect()
        }
    };
    for keys in lists {
        if keys.is_empty() {
            return Err(Error::Ranking(format!("{} contains an empty ranking", path.display())));
        }
        let mut seen = std::collections::HashSet::new();
        for k in keys {
            if !feature_keys.contains(k) {
                return Err(Error::Ranking(format!("unknown feature key `{k}`")));
            }
            if !seen.insert(k) {
                return Err(Error::Ranking(format!("feature key `{k}` is repeated")));
            }
        }
    }
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrace {
    pub instance_index: usize,
    pub predicted_class: usize,
    /// Predicted-class probability after removing 0, 1, 2, ... fields.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    pub source: RankingSource,
    pub fraction_removed: Vec<f64>,
    pub mean_prob: Vec<f64>,
    /// Instances contributing to each step.
    pub n_instances: Vec<usize>,
    pub traces: Vec<InstanceTrace>,
    pub instance_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedInstance {
    pub instance_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionReport {
    pub curves: Vec<DeletionCurve>,
    /// Instances excluded from every curve after a backend failure.
    pub dropped: Vec<DroppedInstance>,
    /// Instances whose full-prompt prediction was a tie.
    pub predicted_ties: usize,
    pub mean_feature_count: f64,
    pub max_removals: usize,
}

impl DeletionReport {
    pub fn curve(&self, source: RankingSource) -> Option<&DeletionCurve> {
        self.curves.iter().find(|c| c.source == source)
    }

    /// Writes `source,step,fraction_removed,mean_prob,n_instances` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "step", "fraction_removed", "mean_prob", "n_instances"])?;
        for c in &self.curves {
            for step in 0..c.mean_prob.len() {
                w.write_record([
                    c.source.as_str().to_string(),
                    step.to_string(),
                    c.fraction_removed[step].to_string(),
                    c.mean_prob[step].to_string(),
                    c.n_instances[step].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Per-instance outcome before reduction.
struct InstanceRun {
    index: usize,
    feature_count: usize,
    predicted: usize,
    tie: bool,
    traces: Vec<Vec<f64>>,
}

/// Runs the deletion protocol for every ranking source present in `rankings`.
///
/// `rankings` holds one order per (source, instance) pair. Each instance
/// gets `min(max_removals, M - 1)` removal steps; the last feature is never
/// removed. An instance whose backend calls fail is dropped from every source.
pub fn run_deletion<B: LogprobBackend + ?Sized>(
    instances: &[TabularInstance],
    rankings: &[RankingOrder],
    backend: &B,
    template: &PromptTemplate,
    vmap: &VerbalizerMap,
    top_k: usize,
    max_removals: usize,
) -> Result<DeletionReport> {
    if max_removals == 0 {
        return Err(Error::Contract("max_removals must be at least 1".into()));
    }
    if instances.is_empty() {
        return Err(Error::Contract("no instances to evaluate".into()));
    }

    let mut sources: Vec<RankingSource> = Vec::new();
    let mut by_key: HashMap<(RankingSource, usize), &RankingOrder> = HashMap::new();
    for r in rankings {
        if !sources.contains(&r.source) {
            sources.push(r.source);
        }
        if by_key.insert((r.source, r.instance_index), r).is_some() {
            return Err(Error::Ranking(format!(
                "duplicate {} ranking for instance {}",
                r.source, r.instance_index
            )));
        }
    }
    if sources.is_empty() {
        return Err(Error::Contract("no rankings supplied".into()));
    }

    // Resolve every ranking to field positions up front; mismatches are hard errors.
    let mut plans: Vec<Vec<Vec<usize>>> = Vec::with_capacity(instances.len());
    for inst in instances {
        let steps = max_removals.min(inst.len().saturating_sub(1));
        let mut per_source = Vec::with_capacity(sources.len());
        for &s in &sources {
            let order = by_key.get(&(s, inst.index)).ok_or_else(|| {
                Error::Ranking(format!("no {s} ranking for instance {}", inst.index))
            })?;
            if order.keys.len() < steps {
                return Err(Error::Ranking(format!(
                    "{s} ranking for instance {} has {} keys, {steps} removals needed",
                    inst.index,
                    order.keys.len()
                )));
            }
            let positions = order.keys[..steps]
                .iter()
                .map(|k| {
                    inst.position(k).ok_or_else(|| {
                        Error::Ranking(format!(
                            "{s} ranking key `{k}` is not a feature of instance {}",
                            inst.index
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            per_source.push(positions);
        }
        plans.push(per_source);
    }

    let runs: Vec<std::result::Result<InstanceRun, DroppedInstance>> = instances
        .par_iter()
        .zip(plans.par_iter())
        .map(|(inst, plan)| {
            run_instance(inst, plan, backend, template, vmap, top_k).map_err(|e| DroppedInstance {
                instance_index: inst.index,
                reason: e.to_string(),
            })
        })
        .collect();

    let mut ok = Vec::new();
    let mut dropped = Vec::new();
    for r in runs {
        match r {
            Ok(run) => ok.push(run),
            Err(d) => {
                log::warn!("dropping instance {}: {}", d.instance_index, d.reason);
                dropped.push(d);
            }
        }
    }

    let mean_m = if ok.is_empty() {
        0.0
    } else {
        ok.iter().map(|r| r.feature_count as f64).sum::<f64>() / ok.len() as f64
    };
    let max_steps = ok.iter().map(|r| r.traces[0].len()).max().unwrap_or(0);

    let curves = sources
        .iter()
        .enumerate()
        .map(|(si, &source)| {
            let mut sums = vec![0.0; max_steps];
            let mut counts = vec![0usize; max_steps];
            for run in &ok {
                for (t, p) in run.traces[si].iter().enumerate() {
                    sums[t] += p;
                    counts[t] += 1;
                }
            }
            DeletionCurve {
                source,
                fraction_removed: (0..max_steps).map(|t| t as f64 / mean_m).collect(),
                mean_prob: sums.iter().zip(&counts).map(|(s, n)| s / *n as f64).collect(),
                n_instances: counts,
                traces: ok
                    .iter()
                    .map(|run| InstanceTrace {
                        instance_index: run.index,
                        predicted_class: run.predicted,
                        probs: run.traces[si].clone(),
                    })
                    .collect(),
                instance_count: ok.len(),
            }
        })
        .collect();

    Ok(DeletionReport {
        curves,
        predicted_ties: ok.iter().filter(|r| r.tie).count(),
        dropped,
        mean_feature_count: mean_m,
        max_removals,
    })
}

fn run_instance<B: LogprobBackend + ?Sized>(
    inst: &TabularInstance,
    plan: &[Vec<usize>],
    backend: &B,
    template: &PromptTemplate,
    vmap: &VerbalizerMap,
    top_k: usize,
) -> Result<InstanceRun> {
    let m = inst.len();
    let mut memo: HashMap<Vec<bool>, ClassDistribution> = HashMap::new();
    let mut dist_for = |removed: &[bool]| -> Result<ClassDistribution> {
        if let Some(d) = memo.get(removed) {
            return Ok(d.clone());
        }
        let prompt = build_prompt(template, &inst.select(|i| !removed[i]))?;
        let (d, _) = class_distribution(&backend.query(&prompt, top_k)?, vmap)?;
        memo.insert(removed.to_vec(), d.clone());
        Ok(d)
    };

    let full = dist_for(&vec![false; m])?;
    let (predicted, tie) = predicted_class(&full);
    let p0 = full.probs()[predicted];

    let mut traces = Vec::with_capacity(plan.len());
    for positions in plan {
        let mut removed = vec![false; m];
        let mut trace = Vec::with_capacity(positions.len() + 1);
        trace.push(p0);
        for &pos in positions {
            removed[pos] = true;
            trace.push(dist_for(&removed)?.probs()[predicted]);
        }
        traces.push(trace);
    }
    Ok(InstanceRun {
        index: inst.index,
        feature_count: m,
        predicted,
        tie,
        traces,
    })
}

/// Trapezoidal area under mean probability versus fraction removed.
pub fn curve_auc(curve: &DeletionCurve) -> Result<f64> {
    trapezoid(&curve.fraction_removed, &curve.mean_prob)
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(format!(
            "trapezoid needs two or more aligned points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::FeatureField;

    fn inst(index: usize, m: usize) -> TabularInstance {
        let fields = (0..m)
            .map(|i| FeatureField::new(format!("k{i}"), "1").unwrap())
            .collect();
        TabularInstance::new(index, fields, None).unwrap()
    }

    fn dist(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn predicted_class_cases() {
        assert_eq!(predicted_class(&dist(&[0.9, 0.1])), (0, false));
        assert_eq!(predicted_class(&dist(&[0.5, 0.5])), (0, true));
        assert_eq!(predicted_class(&dist(&[0.2, 0.8])), (1, false));
    }

    #[test]
    fn random_order_is_seeded_permutation() {
        let i = inst(3, 14);
        let a = random_order(&i, 7);
        assert_eq!(a, random_order(&i, 7));
        let mut sorted = a.keys.clone();
        sorted.sort();
        let mut expect: Vec<String> = i.keys().map(str::to_string).collect();
        expect.sort();
        assert_eq!(sorted, expect);
        assert_ne!(a.keys, random_order(&i, 8).keys);
        assert_eq!(random_order(&inst(0, 1), 5).keys, vec!["k0"]);
    }

    #[test]
    fn auc_examples() {
        let curve = |x: Vec<f64>, y: Vec<f64>| DeletionCurve {
            source: RankingSource::Random,
            n_instances: vec![1; x.len()],
            fraction_removed: x,
            mean_prob: y,
            traces: vec![],
            instance_count: 1,
        };
        let flat = curve(vec![0.0, 0.25, 0.5], vec![0.9, 0.9, 0.9]);
        assert!((curve_auc(&flat).unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(curve_auc(&curve(vec![0.0, 1.0], vec![1.0, 0.0])).unwrap(), 0.5);
        assert_eq!(curve_auc(&curve(vec![0.0, 0.5, 1.0], vec![0.0; 3])).unwrap(), 0.0);
        assert!(curve_auc(&curve(vec![0.0], vec![1.0])).is_err());
    }

    #[test]
    fn external_ranking_files() {
        let dir = tempfile::tempdir().unwrap();
        let keys: Vec<String> = ["capital_gain", "marital_status", "age"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let p = dir.path().join("g.json");
        std::fs::write(&p, r#"{"global": ["capital_gain", "marital_status", "age"]}"#).unwrap();
        let g = load_external_ranking(&p, &keys).unwrap();
        let instances: Vec<_> = (0..3)
            .map(|i| {
                TabularInstance::new(
                    i,
                    keys.iter().map(|k| FeatureField::new(k.clone(), "1").unwrap()).collect(),
                    None,
                )
                .unwrap()
            })
            .collect();
        let orders = g.orders_for(&instances).unwrap();
        assert!(orders.iter().all(|o| o.keys == keys));

        std::fs::write(&p, r#"{"per_instance": {"0": ["age"], "1": ["age"]}}"#).unwrap();
        let per = load_external_ranking(&p, &keys).unwrap();
        assert!(per.orders_for(&instances).is_err());

        std::fs::write(&p, "").unwrap();
        assert!(load_external_ranking(&p, &keys).is_err());

        std::fs::write(&p, r#"{"global": ["capital_loss"]}"#).unwrap();
        let err = load_external_ranking(&p, &keys).unwrap_err();
        assert!(err.to_string().contains("capital_loss"));
    }
}

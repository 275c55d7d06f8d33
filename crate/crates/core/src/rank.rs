//! Global rankings and Spearman rank correlation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionResult, Metric};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub key: String,
    pub mean_score: f64,
}

/// Features sorted by mean normalized attribution, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRanking {
    pub features: Vec<RankedFeature>,
    pub instance_count: usize,
    pub metric: Metric,
    /// Some adjacent features have equal mean scores (ordered by key).
    pub ties: bool,
}

impl GlobalRanking {
    pub fn keys(&self) -> Vec<String> {
        self.features.iter().map(|f| f.key.clone()).collect()
    }

    pub fn scores(&self) -> Vec<(String, f64)> {
        self.features
            .iter()
            .map(|f| (f.key.clone(), f.mean_score))
            .collect()
    }
}

/// Mean of each feature's normalized score across instances.
pub fn global_ranking(results: &[AttributionResult]) -> Result<GlobalRanking> {
    let first = results
        .first()
        .ok_or_else(|| Error::Contract("no attribution results to aggregate".into()))?;
    let mut sums: Vec<(String, f64)> = first.phi.keys().map(|k| (k.clone(), 0.0)).collect();
    for r in results {
        if r.metric != first.metric {
            return Err(Error::Contract(format!(
                "mixed metrics: {} and {}",
                first.metric, r.metric
            )));
        }
        if r.phi.len() != sums.len() || !r.phi.keys().zip(&sums).all(|(a, (b, _))| a == b) {
            return Err(Error::Contract(format!(
                "instance {} has a different feature schema",
                r.instance_index
            )));
        }
        for ((_, s), v) in sums.iter_mut().zip(r.phi.values()) {
            *s += v;
        }
    }
    let n = results.len() as f64;
    let mut features: Vec<RankedFeature> = sums
        .into_iter()
        .map(|(key, s)| RankedFeature {
            key,
            mean_score: s / n,
        })
        .collect();
    features.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score).then(a.key.cmp(&b.key)));
    let ties = features.windows(2).any(|w| w[0].mean_score == w[1].mean_score);
    Ok(GlobalRanking {
        features,
        instance_count: results.len(),
        metric: first.metric,
        ties,
    })
}

/// Scores for an ordering with no scores: earlier keys score higher.
pub fn order_scores(keys: &[String]) -> Vec<(String, f64)> {
    let n = keys.len() as f64;
    keys.iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), n - i as f64))
        .collect()
}

/// 1-based ranks with tied values sharing their average rank (highest score = rank 1).
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho between two scored rankings over the same keys.
///
/// Ties get average ranks; rho is the Pearson correlation of the ranks.
pub fn spearman_rho(a: &[(String, f64)], b: &[(String, f64)]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "rankings have {} and {} keys",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract("spearman needs at least two keys".into()));
    }
    let b_map: HashMap<&str, f64> = b.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if b_map.len() != b.len() {
        return Err(Error::Contract("second ranking repeats a key".into()));
    }
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    let mut seen = std::collections::HashSet::new();
    for (k, v) in a {
        if !seen.insert(k.as_str()) {
            return Err(Error::Contract(format!("first ranking repeats key `{k}`")));
        }
        let w = b_map
            .get(k.as_str())
            .ok_or_else(|| Error::Contract(format!("key `{k}` missing from second ranking")))?;
        xs.push(*v);
        ys.push(*w);
    }
    let rx = average_ranks(&xs);
    let ry = average_ranks(&ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Contract("a ranking has all keys tied".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho between two plain orderings (most important first).
pub fn spearman_orders(a: &[String], b: &[String]) -> Result<f64> {
    spearman_rho(&order_scores(a), &order_scores(b))
}

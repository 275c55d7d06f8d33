//! Analytic logistic oracle standing in for a fine-tuned classifier.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LogprobBackend, TokenLogprob, TopKDistribution};
use crate::error::{Error, Result};
use crate::tabular::{FeatureField, TabularInstance, DEFAULT_INPUT_MARKER, DEFAULT_RESPONSE_MARKER};
use crate::verbalizer::VerbalizerMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logistic,
}

fn default_instances() -> usize {
    30
}

/// Parameters of the oracle, as stored in its JSON spec file.
///
/// The first class is the positive one:
/// `P(classes[0]) = logistic(bias + sum of weights of present keys)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleSpec {
    pub classes: Vec<String>,
    pub weights: IndexMap<String, f64>,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub link: Link,
    /// Number of instances generated by the demo pipeline.
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_input_marker")]
    pub input_marker: String,
    #[serde(default = "default_response_marker")]
    pub response_marker: String,
}

fn default_input_marker() -> String {
    DEFAULT_INPUT_MARKER.to_string()
}
fn default_response_marker() -> String {
    DEFAULT_RESPONSE_MARKER.to_string()
}

impl SyntheticOracleSpec {
    /// Binary yes/no spec over the given weights.
    pub fn binary(weights: impl IntoIterator<Item = (String, f64)>, bias: f64) -> Self {
        Self {
            classes: vec!["yes".into(), "no".into()],
            weights: weights.into_iter().collect(),
            bias,
            link: Link::Logistic,
            instances: default_instances(),
            input_marker: default_input_marker(),
            response_marker: default_response_marker(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed oracle spec {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != 2 {
            return Err(Error::Config(format!(
                "logistic oracle needs exactly 2 classes, got {}",
                self.classes.len()
            )));
        }
        if self.classes[0].trim().to_lowercase() == self.classes[1].trim().to_lowercase() {
            return Err(Error::Config("oracle classes must be distinct".into()));
        }
        if self.weights.is_empty() {
            return Err(Error::Config("oracle spec has no feature weights".into()));
        }
        for (k, w) in &self.weights {
            FeatureField::new(k.clone(), "0")
                .map_err(|_| Error::Config(format!("weight key `{k}` is not a normalized feature key")))?;
            if !w.is_finite() {
                return Err(Error::Config(format!("weight for `{k}` is not finite")));
            }
        }
        if !self.bias.is_finite() {
            return Err(Error::Config("bias is not finite".into()));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Deterministic backend whose answer depends only on which weighted keys
/// appear in the prompt's input block.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: SyntheticOracleSpec,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticOracleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }

    /// Region of the prompt scanned for `key:value` tokens.
    fn input_block<'p>(&self, prompt: &'p str) -> &'p str {
        let Some(start) = prompt.find(&self.spec.input_marker) else {
            return prompt;
        };
        let rest = &prompt[start + self.spec.input_marker.len()..];
        match rest.find(&self.spec.response_marker) {
            Some(end) => &rest[..end],
            None => rest,
        }
    }

    /// Linear predictor for a prompt.
    pub fn logit(&self, prompt: &str) -> f64 {
        let mut z = self.spec.bias;
        let mut seen = std::collections::HashSet::new();
        for tok in self.input_block(prompt).split_whitespace() {
            if let Some((key, value)) = tok.split_once(':') {
                if value.is_empty() || !seen.insert(key) {
                    continue;
                }
                if let Some(w) = self.spec.weights.get(key) {
                    z += w;
                }
            }
        }
        z
    }

    /// Analytic probability of the positive class for a set of present keys.
    pub fn positive_probability<'a>(&self, present: impl IntoIterator<Item = &'a str>) -> f64 {
        let z = self.spec.bias
            + present
                .into_iter()
                .filter_map(|k| self.spec.weights.get(k))
                .sum::<f64>();
        logistic(z)
    }

    /// The verbalizer matching the tokens this oracle emits.
    pub fn verbalizer(&self) -> VerbalizerMap {
        VerbalizerMap::new(
            self.spec
                .classes
                .iter()
                .map(|c| (c.clone(), vec![format!(" {c}")]))
                .collect(),
        )
        .expect("validated classes are distinct")
    }

    /// Instances over the oracle's keys with seeded random integer values.
    pub fn generate_instances(&self, count: usize, seed: u64) -> Vec<TabularInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|index| {
                let fields = self
                    .spec
                    .weights
                    .keys()
                    .map(|k| {
                        let v: u32 = rng.gen_range(0..100);
                        FeatureField::new(k.clone(), v.to_string()).expect("validated key")
                    })
                    .collect();
                TabularInstance::new(index, fields, None).expect("distinct keys")
            })
            .collect()
    }
}

impl LogprobBackend for SyntheticOracle {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        if prompt.is_empty() {
            return Err(Error::Contract("prompt must be non-empty".into()));
        }
        if k == 0 {
            return Err(Error::Contract("k must be positive".into()));
        }
        let z = self.logit(prompt);
        let mut entries = vec![
            TokenLogprob {
                token: format!(" {}", self.spec.classes[0]),
                logprob: -softplus(-z),
            },
            TokenLogprob {
                token: format!(" {}", self.spec.classes[1]),
                logprob: -softplus(z),
            },
        ];
        entries.retain(|e| e.logprob.is_finite());
        // stable: ties keep the positive class first
        entries.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        entries.truncate(k);
        TopKDistribution::new(entries, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(weights: &[(&str, f64)], bias: f64) -> SyntheticOracle {
        SyntheticOracle::new(SyntheticOracleSpec::binary(
            weights.iter().map(|(k, w)| (k.to_string(), *w)),
            bias,
        ))
        .unwrap()
    }

    fn p_yes(d: &TopKDistribution) -> f64 {
        d.entries()
            .iter()
            .find(|e| e.token == " yes")
            .map_or(0.0, |e| e.logprob.exp())
    }

    #[test]
    fn present_feature_shifts_logit() {
        let o = oracle(&[("a", 2.0)], 0.0);
        let d = o.query("### Input:\na:1 b:2\n\n### Response:\n", 10).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p_yes(&d) - expected).abs() < 1e-12);
        assert!((p_yes(&d) - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn absent_feature_gives_half() {
        let o = oracle(&[("a", 2.0)], 0.0);
        let d = o.query("### Input:\nb:2\n\n### Response:\n", 10).unwrap();
        assert_eq!(p_yes(&d), 0.5);
        assert_eq!(d.entries()[0].token, " yes");
    }

    #[test]
    fn only_input_block_is_scanned() {
        let o = oracle(&[("a", 2.0)], 0.0);
        let d = o.query("a:1 in the instruction\n### Input:\nb:2\n### Response:\n", 10).unwrap();
        assert_eq!(p_yes(&d), 0.5);
    }

    #[test]
    fn extreme_logits_stay_valid() {
        let o = oracle(&[("a", 800.0)], 0.0);
        let d = o.query("### Input:\na:1\n### Response:", 10).unwrap();
        assert_eq!(d.entries()[0].logprob, 0.0);
        d.validate().unwrap();
        let d = o.query("### Input:\na:1\n### Response:", 1).unwrap();
        assert_eq!(d.entries().len(), 1);
    }

    #[test]
    fn spec_validation() {
        let mut s = SyntheticOracleSpec::binary([("a".to_string(), 1.0)], 0.0);
        s.classes.push("maybe".into());
        assert!(s.validate().is_err());
        let s = SyntheticOracleSpec::binary([("Bad Key".to_string(), 1.0)], 0.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn generated_instances_are_seeded() {
        let o = oracle(&[("a", 1.0), ("b", 2.0)], 0.0);
        assert_eq!(o.generate_instances(5, 3), o.generate_instances(5, 3));
        assert_eq!(o.generate_instances(5, 3)[4].index, 4);
    }
}

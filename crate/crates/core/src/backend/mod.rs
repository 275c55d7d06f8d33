//! Next-token logprob backends.
//!
//! Every backend answers the same question: given a prompt and `k`, what are
//! the top-`k` next-token candidates and their natural-log probabilities?
//! Three implementations are provided: a remote HTTP service ([`HttpBackend`]),
//! a read-only replay cache ([`ReplayBackend`]) and an analytic logistic
//! oracle for tests and demos ([`SyntheticOracle`]).

mod http;
mod replay;
mod synthetic;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use http::{HttpBackend, HttpConfig, QueryRequest, QueryResponse};
pub use replay::{RecordingBackend, ReplayBackend, ReplayStore};
pub use synthetic::{Link, SyntheticOracle, SyntheticOracleSpec};

/// Slack allowed on the total probability mass of a top-k list.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// One candidate token with its natural-log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Top-k next-token candidates, sorted by descending logprob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKDistribution {
    entries: Vec<TokenLogprob>,
    k: usize,
}

impl TopKDistribution {
    pub fn new(entries: Vec<TokenLogprob>, k: usize) -> Result<Self> {
        let dist = Self { entries, k };
        dist.validate()?;
        Ok(dist)
    }

    /// Checks the ordering, size and mass invariants.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Protocol("k must be positive".into()));
        }
        if self.entries.len() > self.k {
            return Err(Error::Protocol(format!(
                "{} entries returned for k = {}",
                self.entries.len(),
                self.k
            )));
        }
        let mut mass = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.logprob.is_nan() || e.logprob > 0.0 {
                return Err(Error::Protocol(format!(
                    "token {:?} has logprob {} (must be <= 0)",
                    e.token, e.logprob
                )));
            }
            if i > 0 && e.logprob > self.entries[i - 1].logprob {
                return Err(Error::Protocol("entries are not sorted by logprob".into()));
            }
            mass += e.logprob.exp();
        }
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::Protocol(format!("top-k mass {mass} exceeds 1")));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[TokenLogprob] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sum of probabilities over all listed entries.
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.logprob.exp()).sum()
    }
}

/// The `prompt -> top-k logprobs` contract.
pub trait LogprobBackend: Send + Sync {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution>;
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for &B {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        (**self).query(prompt, k)
    }
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for Box<B> {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        (**self).query(prompt, k)
    }
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for Arc<B> {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        (**self).query(prompt, k)
    }
}

/// Cache key for a query: SHA-256 over the exact prompt bytes and `k`.
pub fn prompt_digest(prompt: &str, k: usize) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update((k as u64).to_le_bytes());
    hex::encode(h.finalize())
}

/// Wraps a backend and counts the queries that reach it.
#[derive(Debug)]
pub struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: LogprobBackend> LogprobBackend for Counting<B> {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.query(prompt, k)
    }
}

/// Which backend to open, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendDescriptor {
    Http {
        endpoint: String,
        #[serde(default = "default_timeout", with = "duration_secs")]
        timeout: Duration,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        /// When set, every live response is persisted to this replay file.
        #[serde(default)]
        record: Option<PathBuf>,
    },
    Replay {
        path: PathBuf,
    },
    Synthetic {
        spec: PathBuf,
    },
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}
fn default_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    8
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl BackendDescriptor {
    /// Parses the short command-line form: an `http(s)://` URL,
    /// `replay:<path>` or `synthetic:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::Http {
                endpoint: s.to_string(),
                timeout: default_timeout(),
                retries: default_retries(),
                max_in_flight: default_in_flight(),
                record: None,
            })
        } else if let Some(p) = s.strip_prefix("replay:") {
            Ok(Self::Replay { path: p.into() })
        } else if let Some(p) = s.strip_prefix("synthetic:") {
            Ok(Self::Synthetic { spec: p.into() })
        } else {
            Err(Error::Config(format!(
                "unrecognized backend `{s}` (expected http(s)://..., replay:<path> or synthetic:<path>)"
            )))
        }
    }

    pub fn open(&self) -> Result<Box<dyn LogprobBackend>> {
        Ok(match self {
            Self::Http {
                endpoint,
                timeout,
                retries,
                max_in_flight,
                record,
            } => {
                let http = HttpBackend::new(HttpConfig {
                    endpoint: endpoint.clone(),
                    timeout: *timeout,
                    retries: *retries,
                    max_in_flight: *max_in_flight,
                    ..HttpConfig::default()
                })?;
                match record {
                    Some(path) => Box::new(RecordingBackend::open(http, path)?),
                    None => Box::new(http),
                }
            }
            Self::Replay { path } => Box::new(ReplayBackend::open(path)?),
            Self::Synthetic { spec } => {
                Box::new(SyntheticOracle::new(SyntheticOracleSpec::from_json_file(spec)?)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(token: &str, p: f64) -> TokenLogprob {
        TokenLogprob {
            token: token.into(),
            logprob: p.ln(),
        }
    }

    #[test]
    fn topk_invariants() {
        assert!(TopKDistribution::new(vec![tl(" yes", 0.6), tl(" no", 0.3)], 2).is_ok());
        assert!(TopKDistribution::new(vec![tl(" no", 0.3), tl(" yes", 0.6)], 2).is_err());
        assert!(TopKDistribution::new(vec![tl(" yes", 0.6), tl(" no", 0.3)], 1).is_err());
        assert!(TopKDistribution::new(vec![tl("a", 0.7), tl("b", 0.6)], 2).is_err());
        let bad = TokenLogprob {
            token: "x".into(),
            logprob: 0.1,
        };
        assert!(TopKDistribution::new(vec![bad], 1).is_err());
        let nan = TokenLogprob {
            token: "x".into(),
            logprob: f64::NAN,
        };
        assert!(TopKDistribution::new(vec![nan], 1).is_err());
    }

    #[test]
    fn digest_depends_on_prompt_and_k() {
        let a = prompt_digest("hello", 10);
        assert_eq!(a.len(), 64);
        assert_eq!(a, prompt_digest("hello", 10));
        assert_ne!(a, prompt_digest("hello", 9));
        assert_ne!(a, prompt_digest("hello ", 10));
    }

    #[test]
    fn descriptor_parsing() {
        assert!(matches!(
            BackendDescriptor::parse("http://localhost:8000/logprobs").unwrap(),
            BackendDescriptor::Http { retries: 3, .. }
        ));
        assert_eq!(
            BackendDescriptor::parse("replay:cache.json").unwrap(),
            BackendDescriptor::Replay {
                path: "cache.json".into()
            }
        );
        assert!(BackendDescriptor::parse("ftp://x").is_err());
        let json = r#"{"kind":"http","endpoint":"http://x","timeout":2.5}"#;
        let d: BackendDescriptor = serde_json::from_str(json).unwrap();
        assert!(matches!(d, BackendDescriptor::Http { timeout, .. } if timeout == Duration::from_millis(2500)));
    }
}

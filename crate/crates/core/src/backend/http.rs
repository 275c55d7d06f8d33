//! JSON-over-HTTP backend.
//!
//! Request body: `{"prompt": "...", "top_k": 10}`.
//! Response body: `{"tokens": [{"token": " yes", "logprob": -0.1}, ...]}`,
//! logprobs in nats, sorted descending. Adapters for existing inference
//! servers are expected to translate to this shape.

use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{LogprobBackend, TokenLogprob, TopKDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRequest {
    pub prompt: String,
    pub top_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResponse {
    pub tokens: Vec<TokenLogprob>,
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/logprobs".into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(250),
            max_in_flight: 8,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    limiter: Limiter,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            limiter: Limiter::new(config.max_in_flight),
            config,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, body: &QueryRequest) -> std::result::Result<TopKDistribution, Attempt> {
        let _permit = self.limiter.acquire();
        let resp = self
            .client
            .post(&self.config.endpoint)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        let parsed: QueryResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(Error::Protocol(format!("malformed response: {e}"))))?;
        TopKDistribution::new(parsed.tokens, body.top_k).map_err(Attempt::Fatal)
    }
}

impl LogprobBackend for HttpBackend {
    fn query(&self, prompt: &str, k: usize) -> Result<TopKDistribution> {
        if prompt.is_empty() || k == 0 {
            return Err(Error::Contract("prompt must be non-empty and k positive".into()));
        }
        let body = QueryRequest {
            prompt: prompt.to_string(),
            top_k: k,
        };
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(&body) {
                Ok(d) => return Ok(d),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => {
                    log::warn!("query attempt {} failed: {reason}", attempt + 1);
                    last = reason;
                }
            }
        }
        Err(Error::BackendUnavailable {
            attempts: self.config.retries + 1,
            reason: last,
        })
    }
}

//! Blocking JSON transport for OpenAI-compatible endpoints.
//!
//! Retries HTTP 429 and 5xx responses with exponential backoff and caps the
//! number of in-flight requests per client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

/// Bearer token source for every remote call.
pub const API_KEY_ENV: &str = "RAGBENCH_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(20))
    }
}

/// Connection settings shared by the embedding and chat clients.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// Base URL, e.g. `http://localhost:8080`; `/v1/...` paths are appended.
    pub url: String,
    pub model: String,
    pub max_concurrency: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub api_key: Option<String>,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            max_concurrency: 4,
            timeout: Duration::from_millis(30_000),
            retry: RetryPolicy::default(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    pub fn base_url(&self) -> &str {
        self.url.trim_end_matches('/')
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct JsonClient {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    permits: Semaphore,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("url", &self.cfg.url)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

fn map_transport(err: ureq::Error) -> Error {
    match err {
        ureq::Error::Timeout(_) => Error::Timeout,
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            Error::Timeout
        }
        e => Error::Transport(e.to_string()),
    }
}

impl JsonClient {
    pub fn new(cfg: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Semaphore::new(cfg.max_concurrency);
        Self { cfg, agent, permits }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// POSTs `body` to `{base_url}{path}` and returns the parsed JSON reply.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}{}", self.cfg.base_url(), path);
        let mut attempt = 0u32;
        loop {
            let status = {
                let _permit = self.permits.acquire();
                let mut req = self.agent.post(&url);
                if let Some(key) = &self.cfg.api_key {
                    req = req.header("Authorization", format!("Bearer {key}"));
                }
                let mut resp = req.send_json(body).map_err(map_transport)?;
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    let text = resp.body_mut().read_to_string().map_err(map_transport)?;
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("invalid JSON from {path}: {e}")));
                }
                if !is_retryable(status) {
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    return Err(Error::Protocol(format!("HTTP {status} from {path}: {}", text.trim())));
                }
                status
            };
            if attempt >= self.cfg.retry.max_retries {
                return Err(Error::RateLimitedExhausted {
                    attempts: attempt + 1,
                    status,
                });
            }
            std::thread::sleep(self.cfg.retry.delay_before_retry(attempt));
            attempt += 1;
        }
    }
}

//! Chat-completion backends: an OpenAI-compatible remote client, a
//! deterministic echo mock, and a content-addressed response cache.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{content_key, DiskCache};
use crate::error::{Error, Result};
use crate::http::{EndpointConfig, JsonClient, RetryPolicy};

pub const MOCK_PREFIX: &str = "MOCK-ANSWER: ";
pub const MOCK_MAX_CHARS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(Error::InvalidConfig("chat request needs a user message".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub latency_ms: u64,
    pub cached: bool,
}

pub trait Generator: Send + Sync {
    /// Endpoint identity used in cache keys.
    fn endpoint(&self) -> String;

    /// Model name placed into requests built for this backend.
    fn model(&self) -> String;

    fn generate(&self, req: &ChatRequest) -> Result<ChatResponse>;
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn endpoint(&self) -> String {
        (**self).endpoint()
    }

    fn model(&self) -> String {
        (**self).model()
    }

    fn generate(&self, req: &ChatRequest) -> Result<ChatResponse> {
        (**self).generate(req)
    }
}

/// Echoes the last user message, truncated to [`MOCK_MAX_CHARS`] codepoints,
/// behind [`MOCK_PREFIX`].
pub fn mock_generate(req: &ChatRequest) -> ChatResponse {
    let last = req.last_user_message().unwrap_or("");
    let body: String = last.chars().take(MOCK_MAX_CHARS).collect();
    ChatResponse {
        content: format!("{MOCK_PREFIX}{body}"),
        latency_ms: 0,
        cached: false,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

impl Generator for MockGenerator {
    fn endpoint(&self) -> String {
        "mock://echo".into()
    }

    fn model(&self) -> String {
        "mock".into()
    }

    fn generate(&self, req: &ChatRequest) -> Result<ChatResponse> {
        req.validate()?;
        Ok(mock_generate(req))
    }
}

/// Client for `POST {url}/v1/chat/completions`.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: JsonClient,
}

impl RemoteGenerator {
    pub fn new(cfg: EndpointConfig) -> Self {
        Self {
            client: JsonClient::new(cfg),
        }
    }
}

fn parse_completion(reply: &Value) -> Result<String> {
    let choices = reply
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol("response has no `choices` array".into()))?;
    let first = choices
        .first()
        .ok_or_else(|| Error::Protocol("`choices` is empty".into()))?;
    let content = first
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Protocol("choices[0].message.content missing".into()))?;
    if content.is_empty() {
        return Err(Error::EmptyCompletion);
    }
    Ok(content.to_string())
}

impl Generator for RemoteGenerator {
    fn endpoint(&self) -> String {
        self.client.config().base_url().to_string()
    }

    fn model(&self) -> String {
        self.client.config().model.clone()
    }

    fn generate(&self, req: &ChatRequest) -> Result<ChatResponse> {
        req.validate()?;
        let started = Instant::now();
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let reply = self.client.post("/v1/chat/completions", &body)?;
        let content = parse_completion(&reply)?;
        Ok(ChatResponse {
            content,
            latency_ms: started.elapsed().as_millis() as u64,
            cached: false,
        })
    }
}

/// Cache key: SHA-256 over the canonical JSON of endpoint, model, messages,
/// temperature and max_tokens.
pub fn request_key(endpoint: &str, req: &ChatRequest) -> String {
    content_key(&json!({
        "endpoint": endpoint,
        "model": req.model,
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }))
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request_key: String,
    content: String,
}

pub struct CachedGenerator<G> {
    inner: G,
    cache: DiskCache,
}

impl<G: Generator> CachedGenerator<G> {
    pub fn new(inner: G, dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            inner,
            cache: DiskCache::new(dir.as_ref())?,
        })
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }
}

impl<G: Generator> Generator for CachedGenerator<G> {
    fn endpoint(&self) -> String {
        self.inner.endpoint()
    }

    fn model(&self) -> String {
        self.inner.model()
    }

    /// Hits return the stored content with `cached = true`; corrupt or
    /// mismatched entries are recomputed and overwritten.
    fn generate(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let started = Instant::now();
        let key = request_key(&self.inner.endpoint(), req);
        if let Some(entry) = self.cache.get::<CacheEntry>(&key).filter(|e| e.request_key == key) {
            return Ok(ChatResponse {
                content: entry.content,
                latency_ms: started.elapsed().as_millis() as u64,
                cached: true,
            });
        }
        let resp = self.inner.generate(req)?;
        self.cache.put(
            &key,
            &CacheEntry {
                request_key: key.clone(),
                content: resp.content.clone(),
            },
        )?;
        Ok(resp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub kind: LlmKind,
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
    pub max_concurrency: usize,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            kind: LlmKind::Mock,
            endpoint_url: None,
            model: None,
            max_concurrency: 4,
            timeout_ms: 30_000,
            max_retries: 3,
        }
    }
}

impl LlmConfig {
    pub fn remote(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: LlmKind::Remote,
            endpoint_url: Some(url.into()),
            model: Some(model.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("llm: {m}")));
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be >= 1");
        }
        match self.kind {
            LlmKind::Mock if self.endpoint_url.is_some() || self.model.is_some() => {
                bad("endpoint_url/model are only valid for kind = \"remote\"")
            }
            LlmKind::Remote
                if self.endpoint_url.as_deref().unwrap_or("").is_empty()
                    || self.model.as_deref().unwrap_or("").is_empty() =>
            {
                bad("kind = \"remote\" requires endpoint_url and model")
            }
            _ => Ok(()),
        }
    }

    pub fn endpoint(&self) -> Option<EndpointConfig> {
        let mut ep = EndpointConfig::new(self.endpoint_url.clone()?, self.model.clone()?);
        ep.max_concurrency = self.max_concurrency;
        ep.timeout = Duration::from_millis(self.timeout_ms);
        ep.retry = RetryPolicy {
            max_retries: self.max_retries,
            ..RetryPolicy::default()
        };
        Some(ep)
    }

    /// Remote backends are wrapped in a [`CachedGenerator`] when a cache dir
    /// is given; the mock is never cached.
    pub fn build(&self, cache_dir: Option<&Path>) -> Result<Arc<dyn Generator>> {
        self.validate()?;
        Ok(match self.kind {
            LlmKind::Mock => Arc::new(MockGenerator),
            LlmKind::Remote => {
                let remote = RemoteGenerator::new(self.endpoint().expect("validated"));
                match cache_dir {
                    Some(dir) => Arc::new(CachedGenerator::new(remote, dir)?),
                    None => Arc::new(remote),
                }
            }
        })
    }
}

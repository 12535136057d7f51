//! Embedding backends and the cosine similarity kernel.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{content_key, DiskCache};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::http::{EndpointConfig, JsonClient, RetryPolicy};

pub const DEFAULT_OFFLINE_DIM: usize = 256;
/// Upper bound on texts per `/v1/embeddings` request.
pub const MAX_BATCH: usize = 64;

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("vector must have dim > 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("vector contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine given precomputed norms; 0.0 when either norm is zero.
pub(crate) fn cosine_with_norms(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot(a, b) / (norm_a * norm_b)
}

/// `dot(a, b) / (|a| |b|)`, summed in index order; 0.0 if either vector is zero.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(cosine_with_norms(&a.0, a.norm(), &b.0, b.norm()))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Hashed bag of byte trigrams over the lowercased UTF-8 text, L2-normalized.
/// Texts shorter than three bytes hash as a single gram.
pub fn embed_offline(text: &str, dim: usize) -> Result<Vector> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("embedding dim must be > 0".into()));
    }
    let folded = text.to_lowercase();
    let bytes = folded.as_bytes();
    let mut acc = vec![0.0f64; dim];
    let mut bump = |gram: &[u8]| acc[(fnv1a64(gram) % dim as u64) as usize] += 1.0;
    if bytes.len() < 3 {
        bump(bytes);
    } else {
        bytes.windows(3).for_each(&mut bump);
    }
    let n = norm(&acc);
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(Vector(acc))
}

pub trait Embedder: Send + Sync {
    /// Known output dimension, if fixed ahead of time.
    fn dim(&self) -> Option<usize>;

    /// Identity of the backend; part of every cache key.
    fn fingerprint(&self) -> Value;

    /// One vector per input text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>>;

    fn embed(&self, text: &str) -> Result<Vector> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| Error::Protocol("embedder returned no vector".into()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OfflineEmbedder {
    pub dim: usize,
    pub exec: Execution,
}

impl OfflineEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            exec: Execution::default(),
        }
    }
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_OFFLINE_DIM)
    }
}

impl Embedder for OfflineEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn fingerprint(&self) -> Value {
        json!({"kind": "offline-trigram-fnv1a64", "dim": self.dim})
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        self.exec.try_map(texts, |t| embed_offline(t, self.dim))
    }
}

/// Client for `POST {url}/v1/embeddings`.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: JsonClient,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    index: Option<usize>,
}

fn parse_embeddings(reply: Value, expected: usize) -> Result<Vec<Vector>> {
    let resp: EmbeddingsResponse =
        serde_json::from_value(reply).map_err(|e| Error::Protocol(format!("malformed embeddings response: {e}")))?;
    if resp.data.len() != expected {
        return Err(Error::Protocol(format!(
            "expected {expected} embeddings, got {}",
            resp.data.len()
        )));
    }
    let mut items = resp.data;
    if items.iter().all(|i| i.index.is_some()) {
        items.sort_by_key(|i| i.index);
        if items.iter().enumerate().any(|(pos, i)| i.index != Some(pos)) {
            return Err(Error::Protocol("embedding indices are not 0..n".into()));
        }
    }
    let dim = items[0].embedding.len();
    if let Some(bad) = items.iter().find(|i| i.embedding.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: bad.embedding.len(),
        });
    }
    items
        .into_iter()
        .map(|i| {
            Vector::new(i.embedding).map_err(|e| match e {
                Error::InvalidConfig(m) => Error::Protocol(m),
                e => e,
            })
        })
        .collect()
}

impl RemoteEmbedder {
    pub fn new(cfg: EndpointConfig) -> Self {
        Self {
            client: JsonClient::new(cfg),
        }
    }

    fn embed_one_batch(&self, batch: &[String]) -> Result<Vec<Vector>> {
        let body = json!({"model": self.client.config().model, "input": batch});
        let reply = self.client.post("/v1/embeddings", &body)?;
        parse_embeddings(reply, batch.len())
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn fingerprint(&self) -> Value {
        let cfg = self.client.config();
        json!({"kind": "remote", "endpoint": cfg.base_url(), "model": cfg.model})
    }

    /// Splits into batches of at most [`MAX_BATCH`] and keeps up to
    /// `max_concurrency` of them in flight.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(Error::EmptyText);
        }
        let batches: Vec<&[String]> = texts.chunks(MAX_BATCH).collect();
        let workers = self.client.config().max_concurrency.clamp(1, batches.len().max(1));
        let results: Vec<Mutex<Option<Result<Vec<Vector>>>>> = batches.iter().map(|_| Mutex::new(None)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some(batch) = batches.get(i) else { break };
                    let r = self.embed_one_batch(batch);
                    let failed = r.is_err();
                    *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                    if failed {
                        next.store(batches.len(), std::sync::atomic::Ordering::Relaxed);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
                Some(r) => out.extend(r?),
                None => return Err(Error::Protocol("embedding batch was not attempted".into())),
            }
        }
        if let Some(first) = out.first().map(Vector::dim) {
            if let Some(bad) = out.iter().find(|v| v.dim() != first) {
                return Err(Error::DimMismatch {
                    expected: first,
                    got: bad.dim(),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingEntry {
    request_key: String,
    embedding: Vector,
}

/// Wraps an embedder with a per-text disk cache. Only misses reach the inner
/// backend, in a single batched call.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: DiskCache,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            inner,
            cache: DiskCache::new(dir.as_ref())?,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn key(&self, text: &str) -> String {
        content_key(&json!({"embedder": self.inner.fingerprint(), "text": text}))
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dim(&self) -> Option<usize> {
        self.inner.dim()
    }

    fn fingerprint(&self) -> Value {
        self.inner.fingerprint()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut out: Vec<Option<Vector>> = keys
            .iter()
            .map(|k| {
                self.cache
                    .get::<EmbeddingEntry>(k)
                    .filter(|e| &e.request_key == k)
                    .map(|e| e.embedding)
            })
            .collect();
        let misses: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !misses.is_empty() {
            let miss_texts: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed_batch(&miss_texts)?;
            for (&i, v) in misses.iter().zip(fresh) {
                self.cache.put(
                    &keys[i],
                    &EmbeddingEntry {
                        request_key: keys[i].clone(),
                        embedding: v.clone(),
                    },
                )?;
                out[i] = Some(v);
            }
        }
        let out: Vec<Vector> = out.into_iter().map(|v| v.expect("filled above")).collect();
        if let Some(first) = out.first().map(Vector::dim) {
            if let Some(bad) = out.iter().find(|v| v.dim() != first) {
                return Err(Error::DimMismatch {
                    expected: first,
                    got: bad.dim(),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: Option<usize>,
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
    pub max_concurrency: usize,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Offline,
            dim: None,
            endpoint_url: None,
            model: None,
            max_concurrency: 4,
            timeout_ms: 30_000,
            max_retries: 3,
        }
    }
}

impl EmbedderConfig {
    pub fn remote(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: EmbedderKind::Remote,
            endpoint_url: Some(url.into()),
            model: Some(model.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("embedder: {m}")));
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be >= 1");
        }
        match self.kind {
            EmbedderKind::Offline => {
                if self.endpoint_url.is_some() || self.model.is_some() {
                    return bad("endpoint_url/model are only valid for kind = \"remote\"");
                }
                if self.dim == Some(0) {
                    return bad("dim must be > 0");
                }
            }
            EmbedderKind::Remote => {
                if self.endpoint_url.as_deref().unwrap_or("").is_empty()
                    || self.model.as_deref().unwrap_or("").is_empty()
                {
                    return bad("kind = \"remote\" requires endpoint_url and model");
                }
                if self.dim.is_some() {
                    return bad("dim is only valid for kind = \"offline\"");
                }
            }
        }
        Ok(())
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

    /// Instantiates the backend; remote backends get a disk cache under
    /// `cache_dir/embeddings` when a cache dir is given.
    pub fn build(&self, cache_dir: Option<&Path>) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::Offline => Box::new(OfflineEmbedder::new(self.dim.unwrap_or(DEFAULT_OFFLINE_DIM))),
            EmbedderKind::Remote => {
                let remote = RemoteEmbedder::new(self.endpoint().expect("validated"));
                match cache_dir {
                    Some(dir) => Box::new(CachedEmbedder::new(remote, dir.join("embeddings"))?),
                    None => Box::new(remote),
                }
            }
        })
    }
}

//! Sentence embedding providers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::vocab::tokenize;

#[derive(Debug, Clone, Error)]
#[error("embedding provider `{provider}` failed: {reason}")]
pub struct EmbedError {
    pub provider: String,
    pub reason: String,
}

/// Produces fixed-dimension, unit-norm (or all-zero) vectors.
/// Must be deterministic for identical text.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Cosine similarity; 0 when either vector is all-zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

// FNV-1a, 64-bit
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashed term-frequency embedding over the density tokenizer's tokens.
/// Entries are non-negative, so cosine similarities are in [0, 1].
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub const PROVIDER_ID: &'static str = "hashed-tf";

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(384)
    }
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> &str {
        Self::PROVIDER_ID
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut v = vec![0.0f32; self.dimension];
        for token in tokenize(text).iter().filter(|t| !t.is_empty()) {
            let bucket = (fnv1a(token.as_bytes()) % self.dimension as u64) as usize;
            v[bucket] += 1.0;
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Memoizes another embedder. Reads are concurrent; misses are computed one
/// at a time so each distinct text is embedded once.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<String, Arc<Vec<f32>>>>,
    miss_lock: Mutex<()>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            miss_lock: Mutex::new(()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    fn lookup(&self, text: &str) -> Option<Arc<Vec<f32>>> {
        self.cache.read().expect("cache lock").get(text).cloned()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if let Some(hit) = self.lookup(text) {
            return Ok(hit.as_ref().clone());
        }
        let _guard = self.miss_lock.lock().expect("miss lock");
        if let Some(hit) = self.lookup(text) {
            return Ok(hit.as_ref().clone());
        }
        let v = self.inner.embed(text)?;
        self.cache
            .write()
            .expect("cache lock")
            .insert(text.to_string(), Arc::new(v.clone()));
        Ok(v)
    }
}

/// Embeddings from an OpenAI-compatible `/embeddings` endpoint.
/// Request body: `{"model": ..., "input": [...]}`.
#[derive(Debug, Clone)]
pub struct GatewayEmbedder {
    url: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl GatewayEmbedder {
    pub const PROVIDER_ID: &'static str = "gateway";

    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dimension: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            url: url.into(),
            api_key,
            model: model.into(),
            dimension,
            agent,
        }
    }

    fn error(&self, reason: impl ToString) -> EmbedError {
        EmbedError {
            provider: Self::PROVIDER_ID.to_string(),
            reason: reason.to_string(),
        }
    }
}

impl Embedder for GatewayEmbedder {
    fn id(&self) -> &str {
        Self::PROVIDER_ID
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let parsed: EmbeddingResponse = request
            .send_json(&body)
            .map_err(|e| self.error(e))?
            .body_mut()
            .read_json()
            .map_err(|e| self.error(e))?;
        if parsed.data.len() != texts.len() {
            return Err(self.error(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dimension {
                    return Err(self.error(format!(
                        "expected dimension {}, got {}",
                        self.dimension,
                        d.embedding.len()
                    )));
                }
                let mut v = d.embedding;
                normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}

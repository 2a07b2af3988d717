//! Frozen text encoders.
//!
//! [`HashEmbedder`] is the offline default: a token-hash bag of words (FNV-1a into `dim`
//! buckets, L2-normalized). [`RemoteEmbedder`] calls an OpenAI-style `/embeddings` endpoint
//! through the gateway's HTTP client. Either can be wrapped in an [`EmbeddingCache`].

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::gateway::{BackendConfig, GatewayError, HttpJsonClient};
use crate::text::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed embedding response: {0}")]
    Protocol(String),
    #[error("embedding cache: {0}")]
    Cache(String),
}

pub trait Embedder: Send + Sync {
    /// Identifier used to version caches; changes whenever the encoder's output would.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, id: format!("hash-bow-fnv1a-{dim}") }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            v[self.bucket(&token)] += 1.0;
        }
        l2_normalize(&mut v);
        Ok(v)
    }
}

/// OpenAI-style embeddings endpoint (`{"model", "input"}` → `data[0].embedding`).
pub struct RemoteEmbedder {
    http: HttpJsonClient,
    model_id: String,
    dim: usize,
    id: String,
}

impl RemoteEmbedder {
    pub fn new(cfg: &BackendConfig, dim: usize) -> Result<Self, EmbedError> {
        cfg.validate()?;
        Ok(Self {
            http: HttpJsonClient::from_config(cfg)?,
            model_id: cfg.model_id.clone(),
            dim,
            id: format!("remote-{}-{dim}", cfg.model_id),
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let response = self
            .http
            .post_json(&json!({"model": self.model_id, "input": text}))?;
        let raw = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Protocol("missing data[0].embedding".into()))?;
        let mut v = raw
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| EmbedError::Protocol("non-numeric component".into())))
            .collect::<Result<Vec<_>, _>>()?;
        if v.len() != self.dim {
            return Err(EmbedError::Dimension { expected: self.dim, got: v.len() });
        }
        l2_normalize(&mut v);
        Ok(v)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    embedder_id: String,
    vectors: std::collections::BTreeMap<String, Vec<f64>>,
}

/// Memoizes an embedder by SHA-256 of the input text. Concurrent inserts of the same key are
/// harmless: the encoder is frozen, so every writer stores the same vector.
pub struct EmbeddingCache<E> {
    inner: E,
    vectors: RwLock<HashMap<String, Vec<f64>>>,
}

impl<E: Embedder> EmbeddingCache<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, vectors: RwLock::new(HashMap::new()) }
    }

    fn key(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.vectors.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Load vectors saved by a previous run. A file written by a different embedder is an error.
    pub fn load(&self, path: impl AsRef<Path>) -> Result<usize, EmbedError> {
        let text = std::fs::read_to_string(path).map_err(|e| EmbedError::Cache(e.to_string()))?;
        let file: CacheFile =
            serde_json::from_str(&text).map_err(|e| EmbedError::Cache(e.to_string()))?;
        if file.embedder_id != self.inner.id() {
            return Err(EmbedError::Cache(format!(
                "cache built by `{}`, current embedder is `{}`",
                file.embedder_id,
                self.inner.id()
            )));
        }
        let n = file.vectors.len();
        self.vectors.write().expect("cache poisoned").extend(file.vectors);
        Ok(n)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let vectors = self.vectors.read().expect("cache poisoned");
        let file = CacheFile {
            embedder_id: self.inner.id().to_string(),
            vectors: vectors.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        };
        let text = serde_json::to_string(&file).expect("cache serializes");
        std::fs::write(path, text).map_err(|e| EmbedError::Cache(e.to_string()))
    }
}

impl<E: Embedder> Embedder for EmbeddingCache<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let key = Self::key(text);
        if let Some(v) = self.vectors.read().expect("cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.vectors
            .write()
            .expect("cache poisoned")
            .entry(key)
            .or_insert_with(|| v.clone());
        Ok(v)
    }
}

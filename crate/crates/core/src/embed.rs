//! Text embedding behind a provider abstraction, plus cosine similarity.
//!
//! The built-in [`DeterministicEmbedder`] is a hashed bag-of-words embedder:
//! same text in, same unit vector out, on every machine, with no model. It is
//! the default for tests and offline corpora. [`RemoteEmbedder`] speaks a
//! small HTTP JSON contract for real embedding services.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fnv1a_64;

/// A fixed-length embedding. Either L2-normalized or all-zero (empty text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wraps raw values and L2-normalizes them (all-zero input stays zero).
    pub fn normalized(values: Vec<f64>) -> Self {
        let mut v = EmbeddingVector { values };
        let norm = v.norm();
        if norm > 0.0 {
            for x in &mut v.values {
                *x /= norm;
            }
        }
        v
    }

    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dimension],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|x| *x == 0.0)
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("remote embedder unavailable: {0}")]
    RemoteUnavailable(String),
}

/// Cosine similarity of two equal-dimension vectors.
///
/// Defined as 0 when either vector is all-zero, so empty text can never pass
/// a positive similarity threshold.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x * y)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Something that turns text into a unit vector.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Default dimension for the deterministic embedder.
pub const DEFAULT_DIMENSION: usize = 256;

/// Hashed bag-of-words embedder.
///
/// Lowercases, splits on non-alphanumeric runs, hashes each token with
/// 64-bit FNV-1a, buckets by `hash % dimension`, accumulates counts, and
/// L2-normalizes. Fully deterministic across processes and platforms.
#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    dimension: usize,
}

impl DeterministicEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        DeterministicEmbedder { dimension }
    }
}

impl Default for DeterministicEmbedder {
    fn default() -> Self {
        DeterministicEmbedder::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for DeterministicEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut counts = vec![0.0_f64; self.dimension];
        let lowered = text.to_lowercase();
        for token in lowered.split(|c: char| !c.is_alphanumeric()) {
            if token.is_empty() {
                continue;
            }
            let bucket = (fnv1a_64(token.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        Ok(EmbeddingVector::normalized(counts))
    }
}

/// HTTP embedding client.
///
/// Request body `{"texts": [...]}`, response `{"vectors": [[...], ...]}`.
/// Vectors are re-normalized on receipt. The endpoint and optional bearer
/// credential come from configuration; the transport itself lives in
/// [`crate::provider`], which owns all network I/O.
pub struct RemoteEmbedder {
    endpoint: String,
    api_key: Option<String>,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, dimension: usize) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.into(),
            api_key,
            dimension,
            client: crate::provider::blocking_client(),
        }
    }

    /// One round trip for many texts.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::json!({ "texts": texts });
        let value = crate::provider::http_post_json(
            &self.client,
            &self.endpoint,
            self.api_key.as_deref(),
            &body,
        )
        .map_err(|e| EmbedError::RemoteUnavailable(e.to_string()))?;
        let vectors = value
            .get("vectors")
            .and_then(|v| v.as_array())
            .ok_or_else(|| EmbedError::RemoteUnavailable("response missing `vectors`".into()))?;
        if vectors.len() != texts.len() {
            return Err(EmbedError::RemoteUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        vectors
            .iter()
            .map(|row| {
                let values: Vec<f64> = row
                    .as_array()
                    .ok_or_else(|| {
                        EmbedError::RemoteUnavailable("vector row is not an array".into())
                    })?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(0.0))
                    .collect();
                if values.len() != self.dimension {
                    return Err(EmbedError::DimensionMismatch {
                        left: self.dimension,
                        right: values.len(),
                    });
                }
                Ok(EmbeddingVector::normalized(values))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

/// Declarative embedder selection for configuration files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderConfig {
    Deterministic {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Remote {
        endpoint: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Deterministic {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderConfig::Deterministic { dimension } => {
                Box::new(DeterministicEmbedder::new(*dimension))
            }
            EmbedderConfig::Remote {
                endpoint,
                api_key,
                dimension,
            } => Box::new(RemoteEmbedder::new(
                endpoint.clone(),
                api_key.clone(),
                *dimension,
            )),
        }
    }
}

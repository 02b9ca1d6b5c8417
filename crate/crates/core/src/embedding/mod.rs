//! Text-to-vector backends.
//!
//! Every backend returns raw vectors; [`Embedder`] checks their dimension,
//! L2-normalizes them and memoizes by exact text, so downstream code can treat
//! a dot product as cosine similarity.

mod file;
mod http;
mod mock;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{read_vector_file, write_vector_file, FileBackend, VectorRows};
pub use http::HttpBackend;
pub use mock::{mock_embed, mock_raw, MockBackend};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding backend failed (status {status:?}): {message}")]
    Backend {
        status: Option<u16>,
        message: String,
    },
    #[error("no precomputed vector for text `{0}`")]
    LookupMiss(String),
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("vector file line {line}: {message}")]
    VectorFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    unit_norm: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            unit_norm: false,
        }
    }

    /// Wraps values already known to be unit length. The caller is trusted.
    pub fn unit(values: Vec<f64>) -> Self {
        Self {
            values,
            unit_norm: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbeddingError> {
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(EmbeddingVector::unit(
        v.values.iter().map(|x| x / norm).collect(),
    ))
}

/// A source of raw (unnormalized) vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;

    /// Stable description used in run manifests and index build keys.
    fn identity(&self) -> String;

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Http,
    File,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub url: Option<String>,
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Mock,
            dimension: 256,
            url: None,
            path: None,
            seed: 7,
            batch_size: 64,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

impl EmbedderSpec {
    pub fn open(&self) -> Result<Box<dyn EmbeddingBackend>, EmbeddingError> {
        Ok(match self.kind {
            EmbedderKind::Mock => Box::new(MockBackend::new(self.dimension, self.seed)),
            EmbedderKind::File => {
                let path = self.path.as_ref().ok_or_else(|| EmbeddingError::Backend {
                    status: None,
                    message: "file embedder needs a path".into(),
                })?;
                let backend = FileBackend::open(path)?;
                if backend.dimension() != self.dimension {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dimension,
                        actual: backend.dimension(),
                    });
                }
                Box::new(backend)
            }
            EmbedderKind::Http => {
                let url = self.url.clone().ok_or_else(|| EmbeddingError::Backend {
                    status: None,
                    message: "http embedder needs a url".into(),
                })?;
                Box::new(HttpBackend::new(
                    url,
                    self.dimension,
                    self.max_in_flight,
                    std::time::Duration::from_secs(self.timeout_secs),
                )?)
            }
        })
    }
}

/// Batching, normalizing, caching front end over a backend.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    batch_size: usize,
    cache: Option<RwLock<HashMap<String, EmbeddingVector>>>,
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbeddingBackend>, batch_size: usize) -> Self {
        Self {
            backend,
            batch_size: batch_size.max(1),
            cache: Some(RwLock::new(HashMap::new())),
        }
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn dimension(&self) -> usize {
        self.backend.dimension()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    pub fn backend(&self) -> &dyn EmbeddingBackend {
        self.backend.as_ref()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        Ok(v.pop().expect("one vector per text"))
    }

    /// One unit vector per text, in input order.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let mut found: HashMap<String, EmbeddingVector> = HashMap::new();
        if let Some(cache) = &self.cache {
            let cache = cache.read().unwrap_or_else(|e| e.into_inner());
            for t in texts {
                if let Some(v) = cache.get(t) {
                    found.insert(t.clone(), v.clone());
                }
            }
        }
        let mut queued = HashSet::new();
        let missing: Vec<String> = texts
            .iter()
            .filter(|t| !found.contains_key(*t) && queued.insert(t.as_str()))
            .cloned()
            .collect();
        let dim = self.dimension();
        for chunk in missing.chunks(self.batch_size) {
            let raw = self.backend.embed_raw(chunk)?;
            if raw.len() != chunk.len() {
                return Err(EmbeddingError::Backend {
                    status: None,
                    message: format!("asked for {} vectors, got {}", chunk.len(), raw.len()),
                });
            }
            for (text, values) in chunk.iter().zip(raw) {
                if values.len() != dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: dim,
                        actual: values.len(),
                    });
                }
                let v = normalize(&EmbeddingVector::new(values))?;
                if let Some(cache) = &self.cache {
                    cache
                        .write()
                        .unwrap_or_else(|e| e.into_inner())
                        .insert(text.clone(), v.clone());
                }
                found.insert(text.clone(), v);
            }
        }
        Ok(texts.iter().map(|t| found[t].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn normalize_three_four_five() {
        let v = normalize(&EmbeddingVector::new(vec![3.0, 4.0])).unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-12);
        assert!((v.values()[1] - 0.8).abs() < 1e-12);
        assert!(v.is_unit_norm());
    }

    #[test]
    fn normalize_unit_is_stable() {
        let v = EmbeddingVector::new(vec![0.6, 0.8, 0.0]);
        let n = normalize(&v).unwrap();
        for (a, b) in v.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_zero_fails() {
        assert!(matches!(
            normalize(&EmbeddingVector::new(vec![0.0; 4])),
            Err(EmbeddingError::ZeroVector)
        ));
    }

    proptest! {
        #[test]
        fn normalize_gives_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            let n = normalize(&EmbeddingVector::new(v)).unwrap();
            prop_assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }

    struct Counting {
        inner: MockBackend,
        calls: Arc<AtomicUsize>,
        texts: Arc<AtomicUsize>,
    }

    impl EmbeddingBackend for Counting {
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn identity(&self) -> String {
            "counting".into()
        }
        fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed_raw(texts)
        }
    }

    fn counting(batch: usize) -> (Embedder, Arc<AtomicUsize>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let texts = Arc::new(AtomicUsize::new(0));
        let e = Embedder::new(
            Box::new(Counting {
                inner: MockBackend::new(64, 7),
                calls: calls.clone(),
                texts: texts.clone(),
            }),
            batch,
        );
        (e, calls, texts)
    }

    #[test]
    fn batches_and_caches() {
        let (e, calls, texts) = counting(2);
        let input: Vec<String> = ["a b", "c", "a b", "d e", "f"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = e.embed_batch(&input).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[0], out[2]);
        // 4 distinct texts in batches of 2
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(texts.load(Ordering::SeqCst), 4);
        e.embed_batch(&input).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        for v in out {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cache_is_transparent() {
        let input: Vec<String> = ["fever", "high fever", "fever"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (cached, _, _) = counting(8);
        let (plain, _, _) = counting(8);
        let plain = plain.without_cache();
        assert_eq!(
            cached.embed_batch(&input).unwrap(),
            plain.embed_batch(&input).unwrap()
        );
        assert_eq!(
            cached.embed_batch(&input).unwrap(),
            plain.embed_batch(&input).unwrap()
        );
    }

    #[test]
    fn empty_text_rejected() {
        let (e, _, _) = counting(8);
        assert!(matches!(
            e.embed_batch(&["  ".to_string()]),
            Err(EmbeddingError::EmptyText)
        ));
    }

    struct Wrong;
    impl EmbeddingBackend for Wrong {
        fn dimension(&self) -> usize {
            3
        }
        fn identity(&self) -> String {
            "wrong".into()
        }
        fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
            Ok(texts.iter().map(|_| vec![1.0, 2.0]).collect())
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let e = Embedder::new(Box::new(Wrong), 4);
        assert!(matches!(
            e.embed("x"),
            Err(EmbeddingError::DimensionMismatch {
                expected: 3,
                actual: 2
            })
        ));
    }
}

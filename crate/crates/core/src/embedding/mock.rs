use sha2::{Digest, Sha256};

use super::{normalize, EmbeddingBackend, EmbeddingError, EmbeddingVector};

/// Deterministic offline embedder. Each whitespace token of the lowercased
/// text adds ±1 to one of `dimension` buckets, both chosen by a seeded hash
/// of the token, so texts sharing tokens have positive cosine similarity.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dimension: usize,
    seed: u64,
}

impl MockBackend {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self {
            dimension: dimension.max(1),
            seed,
        }
    }
}

/// Bucket index and sign for one token.
pub(crate) fn token_slot(token: &str, dimension: usize, seed: u64) -> (usize, f64) {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(token.as_bytes())
        .finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let h = u64::from_le_bytes(word);
    let bucket = (h % dimension as u64) as usize;
    let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// The unnormalized token-count vector. When colliding tokens cancel out,
/// the sorted token list hashed as one token stands in, so non-empty text
/// never maps to the zero vector.
pub fn mock_raw(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    let lower = text.to_lowercase();
    let mut tokens: Vec<&str> = lower.split_whitespace().collect();
    for token in &tokens {
        let (bucket, sign) = token_slot(token, dimension, seed);
        v[bucket] += sign;
    }
    if !tokens.is_empty() && v.iter().all(|x| *x == 0.0) {
        tokens.sort_unstable();
        let (bucket, sign) = token_slot(&tokens.join(" "), dimension, seed);
        v[bucket] = sign;
    }
    v
}

pub fn mock_embed(
    text: &str,
    dimension: usize,
    seed: u64,
) -> Result<EmbeddingVector, EmbeddingError> {
    normalize(&EmbeddingVector::new(mock_raw(text, dimension, seed)))
}

impl EmbeddingBackend for MockBackend {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn identity(&self) -> String {
        format!("mock(dim={},seed={})", self.dimension, self.seed)
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(texts
            .iter()
            .map(|t| mock_raw(t, self.dimension, self.seed))
            .collect())
    }
}

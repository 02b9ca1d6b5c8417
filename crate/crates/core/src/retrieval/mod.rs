//! Dense candidate retrieval over ontology aliases.
//!
//! The index holds one unit vector per alias. A query is scored against every
//! alias by dot product, collapsed to the best alias per concept, and turned
//! into a three-way [`RetrievalDecision`] by two thresholds.

mod persist;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{dot, Embedder, EmbeddingError, EmbeddingVector};
use crate::extraction::EntitySpan;
use crate::ontology::{alias_list, AliasKind, Ontology};

pub use persist::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding alias batch {start}..{end} (first alias `{first_alias}`) failed: {source}")]
    AliasBatch {
        start: usize,
        end: usize,
        first_alias: String,
        #[source]
        source: EmbeddingError,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("ontology has no active concepts to index")]
    EmptyOntology,
    #[error("query has dimension {actual}, index has {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub alias: String,
    pub concept_id: String,
    pub kind: AliasKind,
}

/// Immutable alias index. Vectors are stored row-major in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptIndex {
    entries: Vec<IndexEntry>,
    vectors: Vec<f64>,
    dimension: usize,
    ontology_label: String,
    build_key: String,
    content_hash: String,
    concept_ids: Vec<String>,
    entry_concept: Vec<u32>,
}

impl ConceptIndex {
    pub(crate) fn assemble(
        entries: Vec<IndexEntry>,
        vectors: Vec<f64>,
        dimension: usize,
        ontology_label: String,
        build_key: String,
    ) -> Self {
        debug_assert_eq!(entries.len() * dimension, vectors.len());
        let mut ids: BTreeMap<&str, u32> =
            entries.iter().map(|e| (e.concept_id.as_str(), 0)).collect();
        for (i, v) in ids.values_mut().enumerate() {
            *v = i as u32;
        }
        let entry_concept = entries.iter().map(|e| ids[e.concept_id.as_str()]).collect();
        let concept_ids = ids.keys().map(|s| s.to_string()).collect();
        let content_hash = content_hash(&entries, &vectors, dimension, &ontology_label);
        Self {
            entries,
            vectors,
            dimension,
            ontology_label,
            build_key,
            content_hash,
            concept_ids,
            entry_concept,
        }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn concept_count(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn ontology_label(&self) -> &str {
        &self.ontology_label
    }

    /// Hash of the alias list and embedder identity the index was built from.
    pub fn build_key(&self) -> &str {
        &self.build_key
    }

    /// SHA-256 over entries and vector bits.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Best-scoring distinct concepts for a unit query, highest score first,
    /// ties broken by smaller concept id.
    ///
    /// This is an exact scan. An approximate index would replace this method
    /// and nothing else.
    pub fn top_k_concepts(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<Candidate>, RetrievalError> {
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let q = query.values();
        let mut best = vec![f64::NEG_INFINITY; self.concept_ids.len()];
        let mut best_entry = vec![usize::MAX; self.concept_ids.len()];
        for (i, row) in self.vectors.chunks_exact(self.dimension).enumerate() {
            let c = self.entry_concept[i] as usize;
            let s = dot(row, q);
            if s > best[c] {
                best[c] = s;
                best_entry[c] = i;
            }
        }
        let mut order: Vec<usize> = (0..best.len())
            .filter(|&c| best_entry[c] != usize::MAX)
            .collect();
        // concept_ids are sorted, so comparing indices compares ids
        let cmp = |a: &usize, b: &usize| {
            best[*b]
                .partial_cmp(&best[*a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        Ok(order
            .into_iter()
            .map(|c| Candidate {
                concept_id: self.concept_ids[c].clone(),
                best_alias: self.entries[best_entry[c]].alias.clone(),
                score: best[c],
            })
            .collect())
    }

    pub fn query_vector(
        &self,
        query: &EmbeddingVector,
        thresholds: &Thresholds,
    ) -> Result<RetrievalDecision, RetrievalError> {
        let candidates = self.top_k_concepts(query, thresholds.k)?;
        Ok(decide(candidates, thresholds))
    }

    /// Embeds the entity text and decides.
    pub fn query(
        &self,
        entity: &EntitySpan,
        embedder: &Embedder,
        thresholds: &Thresholds,
    ) -> Result<RetrievalDecision, RetrievalError> {
        let v = embedder.embed(&entity.text)?;
        self.query_vector(&v, thresholds)
    }
}

fn content_hash(entries: &[IndexEntry], vectors: &[f64], dimension: usize, label: &str) -> String {
    let mut h = Sha256::new();
    h.update((dimension as u64).to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for (e, row) in entries.iter().zip(vectors.chunks_exact(dimension.max(1))) {
        for s in [&e.alias, &e.concept_id] {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        h.update([e.kind.code()]);
        for v in row {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Key identifying the inputs of an index build: the alias list, the
/// ontology label and the embedder identity.
pub fn build_key(ontology: &Ontology, embedder_identity: &str) -> String {
    let mut h = Sha256::new();
    h.update(embedder_identity.as_bytes());
    h.update([0]);
    h.update(ontology.source_label().as_bytes());
    h.update([0]);
    for a in alias_list(ontology) {
        h.update(a.concept_id.as_bytes());
        h.update([0, a.kind.code(), 0]);
        h.update(a.text.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// Embeds every alias of every active concept.
pub fn build_index(
    ontology: &Ontology,
    embedder: &Embedder,
) -> Result<ConceptIndex, RetrievalError> {
    if ontology.active_len() == 0 {
        return Err(RetrievalError::EmptyOntology);
    }
    let aliases = alias_list(ontology);
    let dimension = embedder.dimension();
    let mut vectors = Vec::with_capacity(aliases.len() * dimension);
    let texts: Vec<String> = aliases.iter().map(|a| a.text.clone()).collect();
    let batch_size = embedder.batch_size();
    for (b, chunk) in texts.chunks(batch_size).enumerate() {
        let start = b * batch_size;
        let embedded =
            embedder
                .embed_batch(chunk)
                .map_err(|source| RetrievalError::AliasBatch {
                    start,
                    end: start + chunk.len(),
                    first_alias: chunk[0].clone(),
                    source,
                })?;
        for v in embedded {
            vectors.extend_from_slice(v.values());
        }
    }
    let entries = aliases
        .into_iter()
        .map(|a| IndexEntry {
            alias: a.text,
            concept_id: a.concept_id,
            kind: a.kind,
        })
        .collect();
    Ok(ConceptIndex::assemble(
        entries,
        vectors,
        dimension,
        ontology.source_label().to_string(),
        build_key(ontology, &embedder.identity()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub concept_id: String,
    pub best_alias: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum RetrievalDecision {
    /// Best score reached the high-confidence threshold.
    Direct {
        candidate: Candidate,
    },
    /// Best score fell in the relaxed band; candidates all lie in the band.
    Ambiguous {
        candidates: Vec<Candidate>,
    },
    NoMatch {
        best: Option<Candidate>,
    },
}

impl RetrievalDecision {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Direct { .. } => "direct",
            Self::Ambiguous { .. } => "ambiguous",
            Self::NoMatch { .. } => "no_match",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Direct-link threshold.
    pub tau1: f64,
    /// Lower edge of the band handed to the linker.
    pub tau2: f64,
    pub k: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau1: 0.95,
            tau2: 0.85,
            k: 5,
        }
    }
}

impl Thresholds {
    pub fn new(tau1: f64, tau2: f64, k: usize) -> Result<Self, RetrievalError> {
        let t = Self { tau1, tau2, k };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0 <= self.tau2 && self.tau2 < self.tau1 && self.tau1 <= 1.0) {
            return Err(RetrievalError::Thresholds(format!(
                "need 0 <= tau2 < tau1 <= 1, got tau1={} tau2={}",
                self.tau1, self.tau2
            )));
        }
        if self.k == 0 {
            return Err(RetrievalError::Thresholds("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Applies the two thresholds to candidates sorted by descending score.
pub fn decide(candidates: Vec<Candidate>, thresholds: &Thresholds) -> RetrievalDecision {
    let Some(best) = candidates.first() else {
        return RetrievalDecision::NoMatch { best: None };
    };
    if best.score >= thresholds.tau1 {
        return RetrievalDecision::Direct {
            candidate: best.clone(),
        };
    }
    if best.score < thresholds.tau2 {
        return RetrievalDecision::NoMatch {
            best: Some(best.clone()),
        };
    }
    let candidates = candidates
        .into_iter()
        .take(thresholds.k)
        .filter(|c| c.score >= thresholds.tau2)
        .collect();
    RetrievalDecision::Ambiguous { candidates }
}

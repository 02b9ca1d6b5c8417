//! Candidate entity extraction.
//!
//! Two strategies produce [`EntitySpan`]s: n-grams over whole sentences
//! (rule-based) and n-grams over clinical segments (segment-based). Both drop
//! unigrams and any span that begins or ends on punctuation or a function word.

mod segments;
mod spans;
mod text;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use segments::{load_segments, split_segments, Segment, SegmentError, SegmentSource};
pub use spans::{boundary_filter, enumerate_ngrams};
pub use text::{is_punctuation, split_sentences, tokenize, DocText, FunctionWords};

pub const MIN_NGRAM: usize = 2;
pub const MAX_NGRAM: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub is_function_word: bool,
    pub is_punctuation: bool,
}

impl Token {
    pub fn is_boundary_blocked(&self) -> bool {
        self.is_function_word || self.is_punctuation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RuleBased,
    SegmentBased,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RuleBased => "rule_based",
            Self::SegmentBased => "segment_based",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rule_based" => Ok(Self::RuleBased),
            "segment_based" => Ok(Self::SegmentBased),
            other => Err(format!("unknown extraction strategy `{other}`")),
        }
    }
}

/// A candidate entity. `text` is the lowercased document slice
/// `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub strategy: Strategy,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Sentence n-grams, boundary-filtered, ordered by `(start, end)`.
pub fn extract_rule_based(doc_id: &str, text: &str, lexicon: &FunctionWords) -> Vec<EntitySpan> {
    let doc = DocText::new(text);
    let mut out = Vec::new();
    for (start, end) in split_sentences(&doc) {
        let tokens = tokenize(&doc, start, end, lexicon);
        let spans = enumerate_ngrams(
            &doc,
            doc_id,
            &tokens,
            MIN_NGRAM,
            MAX_NGRAM,
            Strategy::RuleBased,
        );
        out.extend(boundary_filter(spans, &tokens));
    }
    out.sort_by_key(|s| (s.start, s.end));
    out
}

/// Segment-windowed n-grams. `external` are tagger segments for this
/// document; they are merged with punctuation/conjunction splits of each
/// sentence. Spans found in more than one window are kept once.
pub fn extract_segment_based(
    doc_id: &str,
    text: &str,
    external: &[Segment],
    lexicon: &FunctionWords,
) -> Result<Vec<EntitySpan>, SegmentError> {
    let doc = DocText::new(text);
    let sentences = split_sentences(&doc);
    let segments = split_segments(&doc, doc_id, &sentences, external, lexicon)?;
    let mut out = Vec::new();
    for seg in &segments {
        let tokens = tokenize(&doc, seg.start, seg.end, lexicon);
        let spans = enumerate_ngrams(
            &doc,
            doc_id,
            &tokens,
            MIN_NGRAM,
            MAX_NGRAM,
            Strategy::SegmentBased,
        );
        out.extend(boundary_filter(spans, &tokens));
    }
    out.sort_by_key(|s| (s.start, s.end));
    out.dedup_by_key(|s| (s.start, s.end));
    Ok(out)
}

//! Annotation files: a diffable TSV and a JSON variant with full detail.
//!
//! TSV columns: `doc_id start end concept_id provenance score`, where score is
//! the cosine with six decimals for direct links and the confidence tier for
//! LLM links. One `#` header line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::evaluation::{EvalError, Prediction};
use crate::extraction::Strategy;
use crate::linking::{LinkedMention, MentionScore, Provenance};

pub const TSV_HEADER: &str = "# doc_id\tstart\tend\tconcept_id\tprovenance\tscore";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub concept_id: String,
    pub provenance: Provenance,
    pub score: MentionScore,
    pub retrieval_score: f64,
    pub strategy: Strategy,
}

impl From<&LinkedMention> for AnnotationRecord {
    fn from(m: &LinkedMention) -> Self {
        Self {
            doc_id: m.span.doc_id.clone(),
            start: m.span.start,
            end: m.span.end,
            text: m.span.text.clone(),
            concept_id: m.concept_id.clone(),
            provenance: m.provenance,
            score: m.score,
            retrieval_score: m.retrieval_score,
            strategy: m.span.strategy,
        }
    }
}

pub fn write_tsv<W: Write>(mut w: W, mentions: &[LinkedMention]) -> std::io::Result<()> {
    writeln!(w, "{TSV_HEADER}")?;
    for m in mentions {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            m.span.doc_id, m.span.start, m.span.end, m.concept_id, m.provenance, m.score
        )?;
    }
    w.flush()
}

pub fn write_json<W: Write>(mut w: W, mentions: &[LinkedMention]) -> std::io::Result<()> {
    let records: Vec<AnnotationRecord> = mentions.iter().map(Into::into).collect();
    serde_json::to_writer_pretty(&mut w, &records)?;
    writeln!(w)?;
    w.flush()
}

/// Reads the TSV back as predictions for scoring.
pub fn read_tsv<R: BufRead>(reader: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |message: String| EvalError::Malformed {
            line: i + 1,
            message,
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!(
                "expected 6 tab-separated fields, found {}",
                f.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(format!("`{s}` is not an offset")))
        };
        let (start, end) = (num(f[1])?, num(f[2])?);
        if end <= start {
            return Err(bad(format!("end {end} is not after start {start}")));
        }
        out.push(Prediction {
            doc_id: f[0].into(),
            start,
            end,
            concept_id: f[3].into(),
        });
    }
    Ok(out)
}

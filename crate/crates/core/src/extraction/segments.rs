use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{tokenize, DocText, FunctionWords, Token};

/// Coordinating conjunctions that split a sentence into segments, in
/// addition to every punctuation token.
const SPLIT_CONJUNCTIONS: &[&str] = &["and", "or", "but"];

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("segment {doc_id}:{start}-{end} lies outside the document (length {len})")]
    OutOfRange {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("segment file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    ExternalTagger,
    PunctuationSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub source: SegmentSource,
}

impl Segment {
    pub fn external(doc_id: &str, start: usize, end: usize) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            start,
            end,
            source: SegmentSource::ExternalTagger,
        }
    }
}

fn is_split_token(t: &Token) -> bool {
    t.is_punctuation || SPLIT_CONJUNCTIONS.contains(&t.text.to_lowercase().as_str())
}

/// Union of the external segments and each sentence split at punctuation and
/// coordinating conjunctions. Sorted by offsets; a segment present in both
/// sources is kept once, as external.
pub fn split_segments(
    doc: &DocText,
    doc_id: &str,
    sentences: &[(usize, usize)],
    external: &[Segment],
    lexicon: &FunctionWords,
) -> Result<Vec<Segment>, SegmentError> {
    let mut out = Vec::with_capacity(external.len());
    for seg in external {
        if seg.start >= seg.end || seg.end > doc.len() {
            return Err(SegmentError::OutOfRange {
                doc_id: seg.doc_id.clone(),
                start: seg.start,
                end: seg.end,
                len: doc.len(),
            });
        }
        out.push(Segment {
            doc_id: doc_id.to_string(),
            ..seg.clone()
        });
    }
    for &(s_start, s_end) in sentences {
        let tokens = tokenize(doc, s_start, s_end, lexicon);
        for piece in tokens.split(is_split_token) {
            if let (Some(first), Some(last)) = (piece.first(), piece.last()) {
                out.push(Segment {
                    doc_id: doc_id.to_string(),
                    start: first.start,
                    end: last.end,
                    source: SegmentSource::PunctuationSplit,
                });
            }
        }
    }
    out.sort_by_key(|s| (s.start, s.end, s.source));
    out.dedup_by_key(|s| (s.start, s.end));
    Ok(out)
}

/// Reads a `doc_id<TAB>start<TAB>end` standoff file, grouped by document.
pub fn load_segments<R: BufRead>(
    reader: R,
) -> Result<BTreeMap<String, Vec<Segment>>, SegmentError> {
    let mut out: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| SegmentError::Malformed {
            line: lineno,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(malformed(format!(
                "expected 3 columns, found {}",
                cols.len()
            )));
        }
        let start: usize = cols[1]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad start offset `{}`", cols[1])))?;
        let end: usize = cols[2]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad end offset `{}`", cols[2])))?;
        if start >= end {
            return Err(malformed(format!("start {start} is not before end {end}")));
        }
        let doc_id = cols[0].trim();
        out.entry(doc_id.to_string())
            .or_default()
            .push(Segment::external(doc_id, start, end));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::split_sentences;
    use super::*;

    fn segs(text: &str, external: &[Segment]) -> Vec<(String, SegmentSource)> {
        let d = DocText::new(text);
        let sents = split_sentences(&d);
        split_segments(&d, "d", &sents, external, &FunctionWords::default())
            .unwrap()
            .into_iter()
            .map(|s| (d.slice(s.start, s.end), s.source))
            .collect()
    }

    #[test]
    fn split_at_and() {
        let out = segs("seizures and hypotonia", &[]);
        let texts: Vec<_> = out.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(texts, ["seizures", "hypotonia"]);
    }

    #[test]
    fn external_whole_sentence_dedup() {
        let out = segs(
            "global developmental delay",
            &[Segment::external("d", 0, 26)],
        );
        assert_eq!(
            out,
            [(
                "global developmental delay".to_string(),
                SegmentSource::ExternalTagger
            )]
        );
    }

    #[test]
    fn no_split_points_gives_sentence() {
        let out = segs("global developmental delay", &[]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, "global developmental delay");
    }

    #[test]
    fn punctuation_splits_and_segments_stay_in_sentence() {
        let text = "Short stature, microcephaly; mild delay. Hypotonia or ataxia.";
        let d = DocText::new(text);
        let sents = split_sentences(&d);
        let out = split_segments(&d, "d", &sents, &[], &FunctionWords::default()).unwrap();
        let texts: Vec<_> = out.iter().map(|s| d.slice(s.start, s.end)).collect();
        assert_eq!(
            texts,
            [
                "Short stature",
                "microcephaly",
                "mild delay",
                "Hypotonia",
                "ataxia"
            ]
        );
        for s in &out {
            assert!(sents.iter().any(|(a, b)| *a <= s.start && s.end <= *b));
        }
    }

    #[test]
    fn out_of_range_external() {
        let d = DocText::new("abc");
        let err = split_segments(
            &d,
            "d",
            &[],
            &[Segment::external("d", 1, 4)],
            &FunctionWords::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SegmentError::OutOfRange { .. }));
    }

    #[test]
    fn load_tsv() {
        let map = load_segments("d1\t0\t5\nd2\t3\t9\n\nd1\t6\t8\n".as_bytes()).unwrap();
        assert_eq!(map["d1"].len(), 2);
        assert_eq!(map["d2"][0], Segment::external("d2", 3, 9));
        assert!(load_segments("d1\t5\t5\n".as_bytes()).is_err());
        assert!(matches!(
            load_segments("d1\t0\n".as_bytes()).unwrap_err(),
            SegmentError::Malformed { line: 1, .. }
        ));
    }
}

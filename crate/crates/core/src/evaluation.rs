//! Precision, recall and F1 against gold standoff annotations.
//!
//! Mention level: a prediction counts when it is matched to a gold mention
//! with the same concept and overlapping offsets. Document level: concept sets
//! per document. Both levels micro-average by summing counts over documents.
//! Any metric with a zero denominator is reported as 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linking::LinkedMention;
use crate::ontology::Ontology;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions reference document `{0}`, which is not in the corpus")]
    UnknownDocument(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldMention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub concept_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub concept_id: String,
}

impl From<&LinkedMention> for Prediction {
    fn from(m: &LinkedMention) -> Self {
        Self {
            doc_id: m.span.doc_id.clone(),
            start: m.span.start,
            end: m.span.end,
            concept_id: m.concept_id.clone(),
        }
    }
}

impl From<GoldMention> for Prediction {
    fn from(g: GoldMention) -> Self {
        Self {
            doc_id: g.doc_id,
            start: g.start,
            end: g.end,
            concept_id: g.concept_id,
        }
    }
}

impl From<Prediction> for GoldMention {
    fn from(p: Prediction) -> Self {
        Self {
            doc_id: p.doc_id,
            start: p.start,
            end: p.end,
            concept_id: p.concept_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Mention,
    Document,
}

/// How predictions are paired with gold mentions at mention level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Each gold mention validates at most one prediction. The pairing is a
    /// maximum matching found by augmenting the greedy (start, end) order.
    #[default]
    OneToOne,
    /// Predictions scanned by (start, end), each taking the first free gold
    /// mention. Can leave a better pairing unused.
    Greedy,
    /// A prediction is correct if it overlaps any same-concept gold mention;
    /// recall counts gold mentions overlapped by any prediction.
    AnyOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Gold mentions credited as found. Equals `tp` except under
    /// [`MatchMode::AnyOverlap`].
    pub gold_matched: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            gold_matched: self.gold_matched + o.gold_matched,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocCounts {
    pub doc_id: String,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_document: Vec<DocCounts>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(level: Level, counts: Counts, per_document: Vec<DocCounts>) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.gold_matched, counts.gold_matched + counts.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            level,
            counts,
            precision,
            recall,
            f1,
            per_document,
        }
    }

    pub fn without_breakdown(mut self) -> Self {
        self.per_document.clear();
        self
    }
}

type Span<'a> = (usize, usize, &'a str);

struct DocGroup<'a> {
    pred: Vec<Span<'a>>,
    gold: Vec<Span<'a>>,
}

fn group<'a>(
    pred: &'a [Prediction],
    gold: &'a [GoldMention],
    docs: &BTreeSet<String>,
) -> Result<BTreeMap<&'a str, DocGroup<'a>>, EvalError> {
    let mut out: BTreeMap<&str, DocGroup> = BTreeMap::new();
    for p in pred {
        if !docs.contains(&p.doc_id) {
            return Err(EvalError::UnknownDocument(p.doc_id.clone()));
        }
        out.entry(&p.doc_id)
            .or_insert_with(|| DocGroup {
                pred: vec![],
                gold: vec![],
            })
            .pred
            .push((p.start, p.end, &p.concept_id));
    }
    for g in gold {
        out.entry(&g.doc_id)
            .or_insert_with(|| DocGroup {
                pred: vec![],
                gold: vec![],
            })
            .gold
            .push((g.start, g.end, &g.concept_id));
    }
    for g in out.values_mut() {
        g.pred.sort_unstable();
        g.gold.sort_unstable();
    }
    Ok(out)
}

fn compatible(p: &Span, g: &Span) -> bool {
    p.2 == g.2 && p.0 < g.1 && g.0 < p.1
}

/// Kuhn's augmenting path search from prediction `u`.
fn augment(u: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &v in &adj[u] {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        if owner[v].is_none_or(|w| augment(w, adj, owner, seen)) {
            owner[v] = Some(u);
            return true;
        }
    }
    false
}

fn count_mentions(g: &DocGroup, mode: MatchMode) -> Counts {
    let adj: Vec<Vec<usize>> = g
        .pred
        .iter()
        .map(|p| {
            (0..g.gold.len())
                .filter(|&j| compatible(p, &g.gold[j]))
                .collect()
        })
        .collect();
    let (tp, gold_matched) = match mode {
        MatchMode::AnyOverlap => {
            let tp = adj.iter().filter(|a| !a.is_empty()).count();
            let hit: BTreeSet<usize> = adj.iter().flatten().copied().collect();
            (tp, hit.len())
        }
        MatchMode::Greedy => {
            let mut taken = vec![false; g.gold.len()];
            let mut tp = 0;
            for a in &adj {
                if let Some(&j) = a.iter().find(|&&j| !taken[j]) {
                    taken[j] = true;
                    tp += 1;
                }
            }
            (tp, tp)
        }
        MatchMode::OneToOne => {
            let mut owner = vec![None; g.gold.len()];
            let mut tp = 0;
            for u in 0..adj.len() {
                let mut seen = vec![false; g.gold.len()];
                if augment(u, &adj, &mut owner, &mut seen) {
                    tp += 1;
                }
            }
            (tp, tp)
        }
    };
    Counts {
        tp,
        fp: g.pred.len() - tp,
        fn_: g.gold.len() - gold_matched,
        gold_matched,
    }
}

fn count_documents(g: &DocGroup) -> Counts {
    let pred: BTreeSet<&str> = g.pred.iter().map(|s| s.2).collect();
    let gold: BTreeSet<&str> = g.gold.iter().map(|s| s.2).collect();
    let tp = pred.intersection(&gold).count();
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
        gold_matched: tp,
    }
}

fn aggregate(
    level: Level,
    groups: BTreeMap<&str, DocGroup>,
    count: impl Fn(&DocGroup) -> Counts + Sync,
) -> EvalReport {
    let groups: Vec<_> = groups.into_iter().collect();
    let per_document: Vec<DocCounts> = groups
        .par_iter()
        .map(|(doc_id, g)| DocCounts {
            doc_id: doc_id.to_string(),
            counts: count(g),
        })
        .collect();
    let total = per_document
        .iter()
        .fold(Counts::default(), |acc, d| acc + d.counts);
    EvalReport::from_counts(level, total, per_document)
}

/// Mention-level scores. `docs` is the set of corpus document ids.
pub fn mention_metrics(
    pred: &[Prediction],
    gold: &[GoldMention],
    docs: &BTreeSet<String>,
    mode: MatchMode,
) -> Result<EvalReport, EvalError> {
    let groups = group(pred, gold, docs)?;
    Ok(aggregate(Level::Mention, groups, |g| {
        count_mentions(g, mode)
    }))
}

/// Document-level scores over per-document concept sets.
pub fn document_metrics(
    pred: &[Prediction],
    gold: &[GoldMention],
    docs: &BTreeSet<String>,
) -> Result<EvalReport, EvalError> {
    let groups = group(pred, gold, docs)?;
    Ok(aggregate(Level::Document, groups, count_documents))
}

/// Reads `doc_id<TAB>start<TAB>end<TAB>concept_id` rows. Blank lines and
/// lines starting with `#` are skipped.
pub fn load_gold(reader: impl BufRead) -> Result<Vec<GoldMention>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |message: String| EvalError::Malformed {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let offset = |s: &str, name: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("{name} `{s}` is not a non-negative integer")))
        };
        let start = offset(fields[1], "start")?;
        let end = offset(fields[2], "end")?;
        if end <= start {
            return Err(bad(format!("end {end} is not after start {start}")));
        }
        let (doc_id, concept_id) = (fields[0].trim(), fields[3].trim());
        if doc_id.is_empty() || concept_id.is_empty() {
            return Err(bad("empty doc_id or concept_id".into()));
        }
        out.push(GoldMention {
            doc_id: doc_id.into(),
            start,
            end,
            concept_id: concept_id.into(),
        });
    }
    Ok(out)
}

/// Gold rows that disagree with the corpus or ontology. They stay in scoring.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldValidation {
    pub unknown_documents: BTreeSet<String>,
    pub out_of_range: Vec<GoldMention>,
    pub unknown_concepts: BTreeSet<String>,
}

impl GoldValidation {
    pub fn is_clean(&self) -> bool {
        self.unknown_documents.is_empty()
            && self.out_of_range.is_empty()
            && self.unknown_concepts.is_empty()
    }
}

/// `doc_lengths` maps doc id to its length in characters.
pub fn validate_gold(
    gold: &[GoldMention],
    doc_lengths: &BTreeMap<String, usize>,
    ontology: Option<&Ontology>,
) -> GoldValidation {
    let mut v = GoldValidation::default();
    for g in gold {
        match doc_lengths.get(&g.doc_id) {
            None => {
                v.unknown_documents.insert(g.doc_id.clone());
            }
            Some(&len) if g.end > len => v.out_of_range.push(g.clone()),
            Some(_) => {}
        }
        if let Some(o) = ontology {
            if !o.contains(&g.concept_id) {
                v.unknown_concepts.insert(g.concept_id.clone());
            }
        }
    }
    v
}

/// Aligned plain-text table of reports, optionally followed by each report's
/// per-document rows.
pub fn render_table(reports: &[EvalReport], per_document: bool) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<10} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}\n",
        "level", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    out.push_str(&header);
    for r in reports {
        let level = match r.level {
            Level::Mention => "mention",
            Level::Document => "document",
        };
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}",
            level, r.counts.tp, r.counts.fp, r.counts.fn_, r.precision, r.recall, r.f1
        );
    }
    if per_document {
        for r in reports {
            let width = r
                .per_document
                .iter()
                .map(|d| d.doc_id.len())
                .max()
                .unwrap_or(0)
                .max(6);
            let _ = writeln!(out, "\n{:?} by document", r.level);
            let _ = writeln!(
                out,
                "{:<width$} {:>7} {:>7} {:>7}",
                "doc_id", "tp", "fp", "fn"
            );
            for d in &r.per_document {
                let _ = writeln!(
                    out,
                    "{:<width$} {:>7} {:>7} {:>7}",
                    d.doc_id, d.counts.tp, d.counts.fp, d.counts.fn_
                );
            }
        }
    }
    out.push_str("\nmetrics with a zero denominator are reported as 0\n");
    out
}

//! Overlap resolution among linked mentions of one document.
//!
//! Mentions linked to different concepts are never touched. Mentions of the
//! same concept whose spans overlap form connected components; each component
//! keeps one survivor chosen by the [`ResolutionPolicy`].

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extraction::Strategy;
use crate::linking::{LinkedMention, MentionScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionPolicy {
    /// Keep the best-scoring mention. Direct cosine scores outrank LLM
    /// links; among LLM links the longer span wins.
    HighestScore,
    LongestSpan,
}

impl ResolutionPolicy {
    pub fn for_strategy(strategy: Strategy) -> Self {
        match strategy {
            Strategy::RuleBased => Self::HighestScore,
            Strategy::SegmentBased => Self::LongestSpan,
        }
    }

    /// `Ordering::Greater` when `a` should survive over `b`.
    fn prefer(self, a: &LinkedMention, b: &LinkedMention) -> Ordering {
        let cosine = |m: &LinkedMention| match m.score {
            MentionScore::Cosine(s) => Some(s),
            MentionScore::Confidence(_) => None,
        };
        let by_score = || match (cosine(a), cosine(b)) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => Ordering::Equal,
        };
        let by_len = || a.span.len().cmp(&b.span.len());
        let primary = match self {
            Self::HighestScore => by_score().then_with(by_len),
            Self::LongestSpan => by_len().then_with(by_score),
        };
        primary
            .then_with(|| b.span.start.cmp(&a.span.start))
            .then_with(|| b.span.end.cmp(&a.span.end))
            .then_with(|| b.provenance.cmp(&a.provenance))
    }
}

fn output_order(a: &LinkedMention, b: &LinkedMention) -> Ordering {
    (a.span.start, a.span.end, &a.concept_id, a.provenance).cmp(&(
        b.span.start,
        b.span.end,
        &b.concept_id,
        b.provenance,
    ))
}

pub fn resolve_overlaps(
    mentions: Vec<LinkedMention>,
    policy: ResolutionPolicy,
) -> Vec<LinkedMention> {
    let mut by_concept: BTreeMap<String, Vec<LinkedMention>> = BTreeMap::new();
    for m in mentions {
        by_concept.entry(m.concept_id.clone()).or_default().push(m);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_concept {
        group.sort_by(output_order);
        let mut component: Vec<LinkedMention> = Vec::new();
        let mut reach = 0;
        for m in group {
            if !component.is_empty() && m.span.start >= reach {
                out.push(pick(std::mem::take(&mut component), policy));
            }
            reach = if component.is_empty() {
                m.span.end
            } else {
                reach.max(m.span.end)
            };
            component.push(m);
        }
        if !component.is_empty() {
            out.push(pick(component, policy));
        }
    }
    out.sort_by(output_order);
    out
}

fn pick(component: Vec<LinkedMention>, policy: ResolutionPolicy) -> LinkedMention {
    component
        .into_iter()
        .reduce(|best, m| {
            if policy.prefer(&m, &best) == Ordering::Greater {
                m
            } else {
                best
            }
        })
        .expect("non-empty component")
}

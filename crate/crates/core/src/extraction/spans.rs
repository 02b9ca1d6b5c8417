use std::collections::HashMap;

use super::{DocText, EntitySpan, Strategy, Token};

/// Every contiguous run of `n_min..=n_max` tokens, ordered by start token
/// then length.
pub fn enumerate_ngrams(
    doc: &DocText,
    doc_id: &str,
    tokens: &[Token],
    n_min: usize,
    n_max: usize,
    strategy: Strategy,
) -> Vec<EntitySpan> {
    let n_min = n_min.max(1);
    let mut out = Vec::new();
    for i in 0..tokens.len() {
        for n in n_min..=n_max {
            let Some(last) = tokens.get(i + n - 1) else {
                break;
            };
            let (start, end) = (tokens[i].start, last.end);
            out.push(EntitySpan {
                doc_id: doc_id.to_string(),
                start,
                end,
                text: doc.lower_slice(start, end),
                strategy,
            });
        }
    }
    out
}

/// Keeps spans whose first and last tokens are neither punctuation nor
/// function words.
pub fn boundary_filter(spans: Vec<EntitySpan>, tokens: &[Token]) -> Vec<EntitySpan> {
    let by_start: HashMap<usize, &Token> = tokens.iter().map(|t| (t.start, t)).collect();
    let by_end: HashMap<usize, &Token> = tokens.iter().map(|t| (t.end, t)).collect();
    spans
        .into_iter()
        .filter(|s| match (by_start.get(&s.start), by_end.get(&s.end)) {
            (Some(first), Some(last)) => {
                !first.is_boundary_blocked() && !last.is_boundary_blocked()
            }
            _ => {
                debug_assert!(false, "span {s:?} not aligned to tokens");
                false
            }
        })
        .collect()
}

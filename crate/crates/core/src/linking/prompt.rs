use serde::{Deserialize, Serialize};

use super::LinkError;
use crate::extraction::EntitySpan;
use crate::ontology::Ontology;
use crate::retrieval::Candidate;

const SYSTEM_HEADER: &str = "As an expert clinician, your task is to accurately link the entity \
using the concepts listed below. Accuracy is paramount. If the entity does not precisely refer \
to any of the concepts listed below, please return \"None\"; otherwise, return the corresponding \
concept ID in the following format:
answer:<concept ID or None>
confidence:<one of HIGH, LOW, MEDIUM>

Here are the concepts:
";

const USER_PREFIX: &str = "Here is the entity to link:\nlabel: ";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

impl PromptPair {
    /// The entity label carried by the user prompt.
    pub fn label(&self) -> Option<&str> {
        self.user.strip_prefix(USER_PREFIX)
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the linking prompt. Candidate blocks follow the given order;
/// absent definitions and empty synonym lists are omitted.
pub fn build_prompt(
    entity: &EntitySpan,
    candidates: &[Candidate],
    ontology: &Ontology,
) -> Result<PromptPair, LinkError> {
    if candidates.is_empty() {
        return Err(LinkError::NoCandidates);
    }
    let mut blocks = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let c = ontology
            .get(&cand.concept_id)
            .ok_or_else(|| LinkError::UnknownConcept(cand.concept_id.clone()))?;
        let mut lines = vec![
            format!("id: {}", c.id),
            format!("name: {}", one_line(&c.name)),
        ];
        if let Some(def) = &c.definition {
            lines.push(format!("definition: {}", one_line(def)));
        }
        let synonyms: Vec<String> = c.synonym_texts().map(one_line).collect();
        if !synonyms.is_empty() {
            lines.push(format!("synonyms: {}", synonyms.join(", ")));
        }
        let umls: Vec<String> = c.xref_synonyms.iter().map(|s| one_line(s)).collect();
        if !umls.is_empty() {
            lines.push(format!("umls_synonyms: {}", umls.join(", ")));
        }
        blocks.push(lines.join("\n"));
    }
    Ok(PromptPair {
        system: format!("{SYSTEM_HEADER}{}", blocks.join("\n\n")),
        user: format!("{USER_PREFIX}{}", entity.text),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Strategy;
    use crate::ontology::parse_obo;

    fn span(text: &str) -> EntitySpan {
        EntitySpan {
            doc_id: "d".into(),
            start: 0,
            end: text.chars().count(),
            text: text.into(),
            strategy: Strategy::RuleBased,
        }
    }

    fn cand(id: &str, score: f64) -> Candidate {
        Candidate {
            concept_id: id.into(),
            best_alias: String::new(),
            score,
        }
    }

    fn onto() -> Ontology {
        let text = (1..=5)
            .map(|i| format!("[Term]\nid: X:{i}\nname: concept {i}\ndef: \"def {i}\" []\n"))
            .collect::<String>()
            + "[Term]\nid: X:9\nname: bare\n";
        parse_obo(text.as_bytes()).unwrap()
    }

    #[test]
    fn name_only_candidate() {
        let p = build_prompt(&span("bare thing"), &[cand("X:9", 0.9)], &onto()).unwrap();
        assert!(p
            .system
            .ends_with("Here are the concepts:\nid: X:9\nname: bare"));
        assert!(!p.system.contains("definition:"));
        assert!(!p.system.contains("synonyms:"));
        assert_eq!(p.user, "Here is the entity to link:\nlabel: bare thing");
        assert_eq!(p.label(), Some("bare thing"));
    }

    #[test]
    fn template_lines_present() {
        let p = build_prompt(&span("x y"), &[cand("X:1", 0.9)], &onto()).unwrap();
        assert!(p.system.contains("\nanswer:<concept ID or None>\n"));
        assert!(p
            .system
            .contains("\nconfidence:<one of HIGH, LOW, MEDIUM>\n"));
        assert!(p.system.starts_with("As an expert clinician,"));
    }

    #[test]
    fn blocks_follow_candidate_order() {
        let cands: Vec<_> = [3, 1, 5, 2, 4]
            .iter()
            .enumerate()
            .map(|(rank, i)| cand(&format!("X:{i}"), 0.94 - rank as f64 * 0.01))
            .collect();
        let p = build_prompt(&span("x y"), &cands, &onto()).unwrap();
        let positions: Vec<usize> = cands
            .iter()
            .map(|c| p.system.find(&format!("id: {}\n", c.concept_id)).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.system.matches("definition: ").count(), 5);
    }

    #[test]
    fn deterministic() {
        let cands = [cand("X:2", 0.9), cand("X:1", 0.88)];
        let a = build_prompt(&span("x y"), &cands, &onto()).unwrap();
        let b = build_prompt(&span("x y"), &cands, &onto()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_prompt(&span("x y"), &[], &onto()),
            Err(LinkError::NoCandidates)
        ));
        assert!(matches!(
            build_prompt(&span("x y"), &[cand("X:404", 0.9)], &onto()),
            Err(LinkError::UnknownConcept(id)) if id == "X:404"
        ));
    }
}

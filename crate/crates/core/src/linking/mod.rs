//! Entity linking by prompting a chat model over retrieved candidates.
//!
//! Direct retrieval decisions become mentions without a model call. For
//! ambiguous decisions the candidates are rendered into a prompt, the reply is
//! parsed, and only a HIGH-confidence answer naming an offered candidate is
//! kept.

mod cache;
mod client;
mod prompt;
mod reply;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::EntitySpan;
use crate::ontology::Ontology;
use crate::retrieval::RetrievalDecision;

pub use cache::{reply_key, CacheStats, CachedChat};
pub use client::{ChatBackend, ChatError, ChatKind, ChatScript, ChatSpec, HttpChat, ScriptedChat};
pub use prompt::{build_prompt, PromptPair};
pub use reply::{parse_reply, Answer, Confidence, LinkVerdict, ReplyError};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("no candidates to link against")]
    NoCandidates,
    #[error("candidate `{0}` is not in the ontology")]
    UnknownConcept(String),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    DirectRetrieval,
    LlmLinked,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DirectRetrieval => "direct_retrieval",
            Self::LlmLinked => "llm_linked",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionScore {
    Cosine(f64),
    Confidence(Confidence),
}

impl fmt::Display for MentionScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cosine(s) => write!(f, "{s:.6}"),
            Self::Confidence(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedMention {
    pub span: EntitySpan,
    pub concept_id: String,
    pub provenance: Provenance,
    pub score: MentionScore,
    /// Cosine similarity of the linked concept's best alias.
    pub retrieval_score: f64,
}

impl LinkedMention {
    pub fn overlaps(&self, other: &LinkedMention) -> bool {
        self.span.start < other.span.end && other.span.start < self.span.end
    }
}

/// Why an entity produced no mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Abstention {
    NoMatch,
    AnsweredNone,
    NotHigh { confidence: Confidence },
    OutsideCandidates { answer: String },
    Malformed { error: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkOutcome {
    Linked(LinkedMention),
    Abstained(Abstention),
}

impl LinkOutcome {
    pub fn mention(self) -> Option<LinkedMention> {
        match self {
            Self::Linked(m) => Some(m),
            Self::Abstained(_) => None,
        }
    }
}

pub fn link(
    entity: &EntitySpan,
    decision: &RetrievalDecision,
    chat: &CachedChat,
    ontology: &Ontology,
) -> Result<LinkOutcome, LinkError> {
    let candidates = match decision {
        RetrievalDecision::Direct { candidate } => {
            return Ok(LinkOutcome::Linked(LinkedMention {
                span: entity.clone(),
                concept_id: candidate.concept_id.clone(),
                provenance: Provenance::DirectRetrieval,
                score: MentionScore::Cosine(candidate.score),
                retrieval_score: candidate.score,
            }))
        }
        RetrievalDecision::NoMatch { .. } => {
            return Ok(LinkOutcome::Abstained(Abstention::NoMatch))
        }
        RetrievalDecision::Ambiguous { candidates } => candidates,
    };
    let prompt = build_prompt(entity, candidates, ontology)?;
    let raw = chat.cached_call(&prompt)?;
    let verdict = match parse_reply(&raw) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("malformed reply for `{}`: {e}", entity.text);
            return Ok(LinkOutcome::Abstained(Abstention::Malformed {
                error: e.to_string(),
            }));
        }
    };
    let answer = match verdict.answer {
        Answer::None => return Ok(LinkOutcome::Abstained(Abstention::AnsweredNone)),
        Answer::Concept(id) => id,
    };
    let Some(chosen) = candidates.iter().find(|c| c.concept_id == answer) else {
        log::warn!(
            "reply for `{}` names {answer}, which was not offered",
            entity.text
        );
        return Ok(LinkOutcome::Abstained(Abstention::OutsideCandidates {
            answer,
        }));
    };
    if verdict.confidence != Confidence::High {
        return Ok(LinkOutcome::Abstained(Abstention::NotHigh {
            confidence: verdict.confidence,
        }));
    }
    Ok(LinkOutcome::Linked(LinkedMention {
        span: entity.clone(),
        concept_id: answer,
        provenance: Provenance::LlmLinked,
        score: MentionScore::Confidence(Confidence::High),
        retrieval_score: chosen.score,
    }))
}

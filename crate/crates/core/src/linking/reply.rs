use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::High => "HIGH",
            Self::Medium => "MEDIUM",
            Self::Low => "LOW",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    Concept(String),
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkVerdict {
    pub answer: Answer,
    pub confidence: Confidence,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplyError {
    #[error("reply has no answer line")]
    MissingAnswer,
    #[error("reply has no confidence line")]
    MissingConfidence,
    #[error("unknown confidence `{0}`")]
    BadConfidence(String),
}

const OPENERS: &str = "*_`\"'<[(";
const CLOSERS: &str = "*_`\"'>]).,;";

/// First token after the first case-insensitive occurrence of `marker`, on the
/// same line, with markdown and bracket decoration removed.
fn value_after<'a>(raw: &'a str, marker: &str) -> Option<&'a str> {
    let at = raw.to_ascii_lowercase().find(marker)?;
    let rest = &raw[at + marker.len()..];
    let line = rest.split('\n').next().unwrap_or("");
    let line = line.trim_start_matches(|c: char| c.is_whitespace() || OPENERS.contains(c));
    let token = line.split_whitespace().next()?;
    let token = token.trim_end_matches(|c: char| CLOSERS.contains(c));
    (!token.is_empty()).then_some(token)
}

pub fn parse_reply(raw: &str) -> Result<LinkVerdict, ReplyError> {
    let answer = value_after(raw, "answer:").ok_or(ReplyError::MissingAnswer)?;
    let confidence = value_after(raw, "confidence:").ok_or(ReplyError::MissingConfidence)?;
    let confidence = match confidence.to_ascii_uppercase().as_str() {
        "HIGH" => Confidence::High,
        "MEDIUM" => Confidence::Medium,
        "LOW" => Confidence::Low,
        _ => return Err(ReplyError::BadConfidence(confidence.to_string())),
    };
    let answer = if answer.eq_ignore_ascii_case("none") {
        Answer::None
    } else {
        Answer::Concept(answer.to_string())
    };
    Ok(LinkVerdict {
        answer,
        confidence,
        raw: raw.to_string(),
    })
}

//! Corpus ingestion. Offsets index each text exactly as loaded: no trimming,
//! no newline or Unicode normalization.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Documents ordered by `doc_id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: impl IntoIterator<Item = Document>) -> Result<Self, PipelineError> {
        let mut by_id = BTreeMap::new();
        for d in docs {
            if d.text.is_empty() {
                return Err(PipelineError::Corpus(format!(
                    "document `{}` is empty",
                    d.doc_id
                )));
            }
            if d.doc_id.is_empty() || d.doc_id.contains(['\t', '\n', '\r']) {
                return Err(PipelineError::Corpus(format!(
                    "invalid doc_id {:?}",
                    d.doc_id
                )));
            }
            let id = d.doc_id.clone();
            if by_id.insert(id.clone(), d).is_some() {
                return Err(PipelineError::Corpus(format!("duplicate doc_id `{id}`")));
            }
        }
        Ok(Self {
            documents: by_id.into_values().collect(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc_ids(&self) -> std::collections::BTreeSet<String> {
        self.documents.iter().map(|d| d.doc_id.clone()).collect()
    }

    pub fn char_lengths(&self) -> BTreeMap<String, usize> {
        self.documents
            .iter()
            .map(|d| (d.doc_id.clone(), d.char_len()))
            .collect()
    }
}

#[derive(Deserialize)]
struct JsonDoc {
    doc_id: String,
    text: String,
}

/// A directory of `<doc_id>.txt` files, or a JSON-lines file of
/// `{"doc_id": ..., "text": ...}` objects.
pub fn ingest_corpus(path: &Path) -> Result<Corpus, PipelineError> {
    let io = |e| PipelineError::io(path, e);
    if path.is_dir() {
        let mut docs = Vec::new();
        for entry in fs::read_dir(path).map_err(io)? {
            let p = entry.map_err(io)?.path();
            if !p.is_file() || p.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let doc_id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    PipelineError::Corpus(format!("{}: non-UTF-8 file name", p.display()))
                })?
                .to_string();
            let text = fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?;
            docs.push(Document { doc_id, text });
        }
        return Corpus::new(docs);
    }
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let d: JsonDoc = serde_json::from_str(&line).map_err(|e| {
            PipelineError::Corpus(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        docs.push(Document {
            doc_id: d.doc_id,
            text: d.text,
        });
    }
    Corpus::new(docs)
}

//! OBO ontology loading.
//!
//! Parses `[Term]` stanzas into an immutable [`Ontology`], optionally restricted
//! to the subtree under a root concept, and flattens it into the alias list the
//! retrieval index is built from.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate concept id `{0}`")]
    DuplicateId(String),
    #[error("unknown root concept `{0}`")]
    UnknownRoot(String),
    #[error("root concept `{0}` is obsolete")]
    ObsoleteRoot(String),
    #[error("xref synonym file line {line}: {message}")]
    Sidecar { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scope tag of an OBO synonym. Every scope is ingested; the tag is kept for
/// inspection only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SynonymScope {
    Exact,
    Broad,
    Narrow,
    Related,
}

impl SynonymScope {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "EXACT" => Some(Self::Exact),
            "BROAD" => Some(Self::Broad),
            "NARROW" => Some(Self::Narrow),
            "RELATED" => Some(Self::Related),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "EXACT",
            Self::Broad => "BROAD",
            Self::Narrow => "NARROW",
            Self::Related => "RELATED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synonym {
    pub text: String,
    pub scope: SynonymScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub definition: Option<String>,
    pub synonyms: Vec<Synonym>,
    /// Raw `xref:` values, e.g. `UMLS:C0019284`.
    pub xrefs: Vec<String>,
    /// Synonyms resolved through the xref sidecar file.
    pub xref_synonyms: Vec<String>,
    /// `is_a` parents.
    pub parents: Vec<String>,
    pub obsolete: bool,
}

impl Concept {
    pub fn synonym_texts(&self) -> impl Iterator<Item = &str> {
        self.synonyms.iter().map(|s| s.text.as_str())
    }
}

/// Lowercase and collapse whitespace runs to a single space.
pub fn normalize_alias(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    concepts: BTreeMap<String, Concept>,
    root_id: Option<String>,
    source_label: String,
}

impl Ontology {
    /// Assembles an ontology from concepts, enforcing id uniqueness and alias
    /// dedup. Parents that reference unknown ids are dropped.
    pub fn from_concepts(
        concepts: Vec<Concept>,
        source_label: impl Into<String>,
    ) -> Result<Self, OntologyError> {
        let mut map = BTreeMap::new();
        for concept in concepts {
            if map.contains_key(&concept.id) {
                return Err(OntologyError::DuplicateId(concept.id));
            }
            map.insert(concept.id.clone(), concept);
        }
        let ids: HashSet<String> = map.keys().cloned().collect();
        for concept in map.values_mut() {
            concept.parents.retain(|p| {
                let known = ids.contains(p);
                if !known {
                    log::warn!("{}: dropping is_a to unknown concept {p}", concept.id);
                }
                known
            });
            dedup_aliases(concept);
        }
        Ok(Self {
            concepts: map,
            root_id: None,
            source_label: source_label.into(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.concepts.contains_key(id)
    }

    /// Concepts in id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn active_len(&self) -> usize {
        self.concepts.values().filter(|c| !c.obsolete).count()
    }

    pub fn root_id(&self) -> Option<&str> {
        self.root_id.as_deref()
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn with_source_label(mut self, label: impl Into<String>) -> Self {
        self.source_label = label.into();
        self
    }

    /// SHA-256 over the canonical OBO serialization plus root id.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_obo().as_bytes());
        hasher.update(b"\0root=");
        hasher.update(self.root_id.as_deref().unwrap_or("").as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Attaches synonyms from a `key<TAB>synonym` sidecar. The key is either a
    /// concept id or an xref code; an xref code applies to every concept that
    /// carries it.
    pub fn with_xref_synonyms<R: BufRead>(mut self, reader: R) -> Result<Self, OntologyError> {
        let mut by_xref: HashMap<String, Vec<String>> = HashMap::new();
        for concept in self.concepts.values() {
            for x in &concept.xrefs {
                by_xref
                    .entry(x.clone())
                    .or_default()
                    .push(concept.id.clone());
            }
        }
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, synonym)) = line.split_once('\t') else {
                return Err(OntologyError::Sidecar {
                    line: lineno,
                    message: "expected `key<TAB>synonym`".into(),
                });
            };
            let (key, synonym) = (key.trim(), synonym.trim());
            if synonym.is_empty() {
                return Err(OntologyError::Sidecar {
                    line: lineno,
                    message: "empty synonym".into(),
                });
            }
            let targets: Vec<String> = if self.concepts.contains_key(key) {
                vec![key.to_string()]
            } else {
                by_xref.get(key).cloned().unwrap_or_default()
            };
            for id in targets {
                if let Some(c) = self.concepts.get_mut(&id) {
                    c.xref_synonyms.push(synonym.to_string());
                }
            }
        }
        for concept in self.concepts.values_mut() {
            dedup_aliases(concept);
        }
        Ok(self)
    }

    /// Serializes to OBO 1.4 text that [`parse_obo`] reads back unchanged.
    /// Sidecar synonyms are not part of OBO and are not written.
    pub fn to_obo(&self) -> String {
        let mut out = String::from("format-version: 1.4\n");
        if !self.source_label.is_empty() {
            out.push_str(&format!("ontology: {}\n", self.source_label));
        }
        for c in self.concepts.values() {
            out.push_str("\n[Term]\n");
            out.push_str(&format!("id: {}\n", c.id));
            out.push_str(&format!("name: {}\n", c.name));
            if let Some(def) = &c.definition {
                out.push_str(&format!("def: \"{}\" []\n", escape_quoted(def)));
            }
            for s in &c.synonyms {
                out.push_str(&format!(
                    "synonym: \"{}\" {} []\n",
                    escape_quoted(&s.text),
                    s.scope.as_str()
                ));
            }
            for x in &c.xrefs {
                out.push_str(&format!("xref: {x}\n"));
            }
            for p in &c.parents {
                out.push_str(&format!("is_a: {p}\n"));
            }
            if c.obsolete {
                out.push_str("is_obsolete: true\n");
            }
        }
        out
    }
}

fn dedup_aliases(concept: &mut Concept) {
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(normalize_alias(&concept.name));
    concept
        .synonyms
        .retain(|s| seen.insert(normalize_alias(&s.text)));
    concept
        .xref_synonyms
        .retain(|s| seen.insert(normalize_alias(s)));
    let mut parents = HashSet::new();
    concept.parents.retain(|p| parents.insert(p.clone()));
}

#[derive(Default)]
struct StanzaBuilder {
    line: usize,
    id: Option<String>,
    name: Option<String>,
    definition: Option<String>,
    synonyms: Vec<Synonym>,
    xrefs: Vec<String>,
    parents: Vec<String>,
    obsolete: bool,
}

impl StanzaBuilder {
    fn finish(self) -> Result<Concept, OntologyError> {
        let id = self.id.ok_or_else(|| OntologyError::Malformed {
            line: self.line,
            message: "[Term] stanza has no id".into(),
        })?;
        let name = self.name.unwrap_or_default();
        if name.is_empty() && !self.obsolete {
            return Err(OntologyError::Malformed {
                line: self.line,
                message: format!("term {id} has no name"),
            });
        }
        Ok(Concept {
            id,
            name,
            definition: self.definition,
            synonyms: self.synonyms,
            xrefs: self.xrefs,
            xref_synonyms: Vec::new(),
            parents: self.parents,
            obsolete: self.obsolete,
        })
    }
}

/// Parses OBO 1.2/1.4 text. Only `[Term]` stanzas are kept; obsolete terms
/// are retained and flagged.
pub fn parse_obo<R: BufRead>(reader: R) -> Result<Ontology, OntologyError> {
    let mut concepts = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<StanzaBuilder> = None;
    let mut in_header = true;
    let mut header_ontology = None;
    let mut header_version = None;

    let mut flush = |builder: Option<StanzaBuilder>, concepts: &mut Vec<Concept>| {
        if let Some(b) = builder {
            let c = b.finish()?;
            if !seen.insert(c.id.clone()) {
                return Err(OntologyError::DuplicateId(c.id));
            }
            concepts.push(c);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('!') {
            continue;
        }
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            in_header = false;
            flush(current.take(), &mut concepts)?;
            if trimmed == "[Term]" {
                current = Some(StanzaBuilder {
                    line: lineno,
                    ..Default::default()
                });
            }
            continue;
        }
        let Some((tag, value)) = trimmed.split_once(':') else {
            return Err(OntologyError::Malformed {
                line: lineno,
                message: format!("expected `tag: value`, got `{trimmed}`"),
            });
        };
        let value = value.trim();
        if in_header {
            match tag {
                "ontology" => header_ontology = Some(value.to_string()),
                "data-version" => header_version = Some(value.to_string()),
                _ => {}
            }
            continue;
        }
        let Some(term) = current.as_mut() else {
            continue;
        };
        let malformed = |message: String| OntologyError::Malformed {
            line: lineno,
            message,
        };
        match tag {
            "id" => term.id = Some(first_token(value).to_string()),
            "name" => term.name = Some(value.to_string()),
            "def" => {
                let (text, _) = parse_quoted(value).map_err(malformed)?;
                term.definition = Some(text);
            }
            "synonym" => {
                let (text, rest) = parse_quoted(value).map_err(malformed)?;
                let scope = rest
                    .split_whitespace()
                    .next()
                    .and_then(SynonymScope::parse)
                    .unwrap_or(SynonymScope::Related);
                term.synonyms.push(Synonym { text, scope });
            }
            "xref" => {
                let x = first_token(value);
                if !x.is_empty() {
                    term.xrefs.push(x.to_string());
                }
            }
            "is_a" => term.parents.push(first_token(value).to_string()),
            "is_obsolete" => term.obsolete = value == "true",
            _ => {}
        }
    }
    flush(current.take(), &mut concepts)?;

    let label = [header_ontology, header_version]
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .join(" ");
    Ontology::from_concepts(concepts, label)
}

fn first_token(value: &str) -> &str {
    value.split_whitespace().next().unwrap_or("")
}

/// Reads a leading `"..."` with OBO escapes, returning the text and the rest.
fn parse_quoted(value: &str) -> Result<(String, &str), String> {
    let mut chars = value.char_indices();
    match chars.next() {
        Some((_, '"')) => {}
        _ => return Err(format!("expected quoted text, got `{value}`")),
    }
    let mut out = String::new();
    let mut escaped = false;
    for (i, ch) in chars {
        if escaped {
            out.push(match ch {
                'n' => '\n',
                't' => '\t',
                other => other,
            });
            escaped = false;
        } else if ch == '\\' {
            escaped = true;
        } else if ch == '"' {
            return Ok((out, value[i + 1..].trim_start()));
        } else {
            out.push(ch);
        }
    }
    Err(format!("unterminated quoted text in `{value}`"))
}

fn escape_quoted(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}

/// Restricts to `root_id` and its non-obsolete descendants. Parent lists are
/// pruned to ids inside the subtree.
pub fn subtree_filter(ontology: &Ontology, root_id: &str) -> Result<Ontology, OntologyError> {
    let root = ontology
        .get(root_id)
        .ok_or_else(|| OntologyError::UnknownRoot(root_id.to_string()))?;
    if root.obsolete {
        return Err(OntologyError::ObsoleteRoot(root_id.to_string()));
    }
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for c in ontology.concepts().filter(|c| !c.obsolete) {
        for p in &c.parents {
            children.entry(p.as_str()).or_default().push(c.id.as_str());
        }
    }
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    let mut queue = VecDeque::from([root_id]);
    while let Some(id) = queue.pop_front() {
        if !keep.insert(id) {
            continue;
        }
        if let Some(kids) = children.get(id) {
            queue.extend(kids.iter().copied());
        }
    }
    let concepts = keep
        .iter()
        .map(|id| {
            let mut c = ontology.concepts[*id].clone();
            c.parents.retain(|p| keep.contains(p.as_str()));
            (c.id.clone(), c)
        })
        .collect();
    Ok(Ontology {
        concepts,
        root_id: Some(root_id.to_string()),
        source_label: ontology.source_label.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AliasKind {
    Name,
    Synonym,
    Xref,
}

impl AliasKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Name => 0,
            Self::Synonym => 1,
            Self::Xref => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Name),
            1 => Some(Self::Synonym),
            2 => Some(Self::Xref),
            _ => None,
        }
    }
}

impl fmt::Display for AliasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Name => "name",
            Self::Synonym => "synonym",
            Self::Xref => "xref",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alias {
    pub concept_id: String,
    pub kind: AliasKind,
    pub text: String,
}

/// Every surface form of every non-obsolete concept, normalized, ordered by
/// (concept id, kind, alias).
pub fn alias_list(ontology: &Ontology) -> Vec<Alias> {
    let mut out = Vec::new();
    for c in ontology.concepts().filter(|c| !c.obsolete) {
        let mut entries = vec![Alias {
            concept_id: c.id.clone(),
            kind: AliasKind::Name,
            text: normalize_alias(&c.name),
        }];
        entries.extend(c.synonym_texts().map(|s| Alias {
            concept_id: c.id.clone(),
            kind: AliasKind::Synonym,
            text: normalize_alias(s),
        }));
        entries.extend(c.xref_synonyms.iter().map(|s| Alias {
            concept_id: c.id.clone(),
            kind: AliasKind::Xref,
            text: normalize_alias(s),
        }));
        entries.sort();
        out.extend(entries);
    }
    out
}

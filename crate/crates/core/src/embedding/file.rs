use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EmbeddingBackend, EmbeddingError};

/// Precomputed vectors keyed by exact text.
///
/// File layout: a `dim=<D>` header line, then `text<TAB>v1,v2,...,vD` per line.
#[derive(Debug, Clone)]
pub struct FileBackend {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    digest: String,
}

impl FileBackend {
    pub fn open(path: &Path) -> Result<Self, EmbeddingError> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let (dimension, entries) = read_vector_file(reader)?;
        let mut hasher = Sha256::new();
        let mut vectors = HashMap::with_capacity(entries.len());
        for (line, (text, values)) in entries.into_iter().enumerate() {
            hasher.update(text.as_bytes());
            for v in &values {
                hasher.update(v.to_le_bytes());
            }
            if vectors.insert(text.clone(), values).is_some() {
                return Err(EmbeddingError::VectorFile {
                    line: line + 2,
                    message: format!("duplicate text `{text}`"),
                });
            }
        }
        Ok(Self {
            dimension,
            vectors,
            digest: hex::encode(hasher.finalize()),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingBackend for FileBackend {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn identity(&self) -> String {
        format!("file(dim={},sha256={})", self.dimension, &self.digest[..16])
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbeddingError::LookupMiss(t.clone()))
            })
            .collect()
    }
}

/// `(text, values)` rows of a vector file.
pub type VectorRows = Vec<(String, Vec<f64>)>;

/// Parses the vector-file text format into `(dimension, rows)`.
pub fn read_vector_file<R: BufRead>(reader: R) -> Result<(usize, VectorRows), EmbeddingError> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let dimension: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| EmbeddingError::VectorFile {
            line: 1,
            message: format!("expected `dim=<D>` header, got `{header}`"),
        })?;
    let mut entries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| EmbeddingError::VectorFile {
            line: lineno,
            message,
        };
        let (text, values) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad("expected `text<TAB>values`".into()))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("bad number: {e}")))?;
        if values.len() != dimension {
            return Err(bad(format!(
                "expected {dimension} values, found {}",
                values.len()
            )));
        }
        entries.push((text.to_string(), values));
    }
    Ok((dimension, entries))
}

/// Writes entries in the vector-file format. Values use Rust's shortest
/// round-trip float formatting, so reading back is exact.
pub fn write_vector_file<'a, W: Write>(
    mut out: W,
    dimension: usize,
    entries: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<(), EmbeddingError> {
    writeln!(out, "dim={dimension}")?;
    for (i, (text, values)) in entries.into_iter().enumerate() {
        if text.contains(['\t', '\n', '\r']) {
            return Err(EmbeddingError::VectorFile {
                line: i + 2,
                message: format!("text `{text}` contains a tab or newline"),
            });
        }
        if values.len() != dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dimension,
                actual: values.len(),
            });
        }
        let joined = values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{text}\t{joined}")?;
    }
    Ok(())
}

//! Binary index container.
//!
//! Layout (little endian): magic `CRIX`, u32 version, u32 dimension,
//! u64 entry count, string ontology label, string build key, 32-byte content
//! hash, then per entry: string alias, string concept id, u8 alias kind,
//! `dimension` f64 values. Strings are u32 length + UTF-8 bytes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ConceptIndex, IndexEntry, RetrievalError};
use crate::embedding::write_vector_file;
use crate::ontology::AliasKind;

pub const MAGIC: &[u8; 4] = b"CRIX";
pub const FORMAT_VERSION: u32 = 1;

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], RetrievalError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => RetrievalError::Corrupt("truncated".into()),
        _ => RetrievalError::Io(e),
    })?;
    Ok(buf)
}

fn get_str<R: Read>(r: &mut R) -> Result<String, RetrievalError> {
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| RetrievalError::Corrupt("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| RetrievalError::Corrupt("invalid UTF-8".into()))
}

impl ConceptIndex {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        put_str(&mut w, &self.ontology_label)?;
        put_str(&mut w, &self.build_key)?;
        let hash = hex::decode(&self.content_hash).expect("hex content hash");
        w.write_all(&hash)?;
        for (i, e) in self.entries.iter().enumerate() {
            put_str(&mut w, &e.alias)?;
            put_str(&mut w, &e.concept_id)?;
            w.write_all(&[e.kind.code()])?;
            for v in self.vector(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads and verifies an index; a content hash mismatch is an error.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RetrievalError> {
        let magic: [u8; 4] = read_array(&mut r)?;
        if &magic != MAGIC {
            return Err(RetrievalError::Corrupt("not an index file".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(RetrievalError::Corrupt(format!(
                "unsupported format version {version}"
            )));
        }
        let dimension = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let label = get_str(&mut r)?;
        let build_key = get_str(&mut r)?;
        let stored_hash: [u8; 32] = read_array(&mut r)?;
        let mut entries = Vec::with_capacity(count.min(1 << 24));
        let mut vectors = Vec::with_capacity(count.min(1 << 24) * dimension);
        for _ in 0..count {
            let alias = get_str(&mut r)?;
            let concept_id = get_str(&mut r)?;
            let [code] = read_array::<1, _>(&mut r)?;
            let kind = AliasKind::from_code(code)
                .ok_or_else(|| RetrievalError::Corrupt(format!("bad alias kind {code}")))?;
            for _ in 0..dimension {
                vectors.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            entries.push(IndexEntry {
                alias,
                concept_id,
                kind,
            });
        }
        let index = ConceptIndex::assemble(entries, vectors, dimension, label, build_key);
        if index.content_hash != hex::encode(stored_hash) {
            return Err(RetrievalError::Corrupt("content hash mismatch".into()));
        }
        Ok(index)
    }

    /// Writes atomically via a sibling temp file.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Exports aliases and vectors in the text vector-file format. Alias
    /// texts shared by several concepts are written once.
    pub fn export_vectors<W: Write>(&self, w: W) -> Result<(), RetrievalError> {
        let mut seen = std::collections::HashSet::new();
        let rows = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| seen.insert(e.alias.as_str()))
            .map(|(i, e)| (e.alias.as_str(), self.vector(i)));
        write_vector_file(w, self.dimension, rows)?;
        Ok(())
    }
}

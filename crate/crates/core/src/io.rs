//! File formats: embeddings and manifest JSON-lines, JSON documents, atomic
//! writes and config digests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetManifest, Modality, Record};
use crate::error::{CcrError, Result};
use crate::scalar::Scalar;

/// One line of an embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EmbeddingRecord<T> {
    pub id: String,
    pub script: Option<String>,
    #[serde(rename = "char")]
    pub character: Option<String>,
    pub kind: Modality,
    pub dim: usize,
    pub values: Vec<T>,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CcrError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CcrError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CcrError::io(path, e))?;
    tmp.persist(path).map_err(|e| CcrError::io(path, e.error))?;
    Ok(())
}

fn to_jsonl<S: Serialize>(items: &[S]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CcrError::Parse(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_jsonl<D: DeserializeOwned>(path: &Path) -> Result<Vec<D>> {
    let file = fs::File::open(path).map_err(|e| CcrError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CcrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            CcrError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_embeddings<T: Scalar>(path: impl AsRef<Path>, records: &[EmbeddingRecord<T>]) -> Result<()> {
    write_atomic(path, &to_jsonl(records)?)
}

/// Reads an embeddings file, checking dims and finiteness line by line.
pub fn read_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord<T>>> {
    let path = path.as_ref();
    let records: Vec<EmbeddingRecord<T>> = read_jsonl(path)?;
    let mut dim = None;
    for r in &records {
        if r.values.len() != r.dim {
            return Err(CcrError::Parse(format!(
                "record `{}` declares dim {} but has {} values",
                r.id,
                r.dim,
                r.values.len()
            )));
        }
        match dim {
            None => dim = Some(r.dim),
            Some(d) if d != r.dim => {
                return Err(CcrError::Parse(format!(
                    "record `{}` has dim {} but earlier records have {d}",
                    r.id, r.dim
                )))
            }
            _ => {}
        }
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    write_atomic(path, &to_jsonl(&manifest.records)?)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let records: Vec<Record> = read_jsonl(path.as_ref())?;
    Ok(DatasetManifest { records })
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CcrError::Parse(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CcrError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CcrError::Parse(format!("{}: {e}", path.display())))
}

/// SHA-256 of the canonical JSON form (object keys sorted).
pub fn config_digest<S: Serialize>(config: &S) -> Result<String> {
    let value = serde_json::to_value(config).map_err(|e| CcrError::Parse(e.to_string()))?;
    let canonical = serde_json::to_vec(&value).map_err(|e| CcrError::Parse(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

//! Corpus file formats.
//!
//! JSONL: one object per line, `{"id", "category", "text"?, "embedding"}`.
//!
//! Binary: magic `HICV`, version byte 0x01, `n` and `d` as u32 little-endian,
//! then n*d f32 little-endian row-major; ids/categories/text live in a
//! companion JSONL (data path with its extension replaced by `meta.jsonl`),
//! one `{"id", "category", "text"?}` object per row in order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Corpus, Utterance};

pub const BINARY_MAGIC: &[u8; 4] = b"HICV";
pub const BINARY_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Binary,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    category: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    id: String,
    category: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

pub fn load_corpus<S: Scalar>(path: &Path, format: CorpusFormat) -> Result<Corpus<S>> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path),
        CorpusFormat::Binary => load_binary(path),
    }
}

pub fn save_corpus<S: Scalar>(corpus: &Corpus<S>, path: &Path, format: CorpusFormat) -> Result<()> {
    match format {
        CorpusFormat::Jsonl => save_jsonl(corpus, path),
        CorpusFormat::Binary => save_binary(corpus, path),
    }
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.jsonl")
}

fn load_jsonl<S: Scalar>(path: &Path) -> Result<Corpus<S>> {
    let reader = BufReader::new(File::open(path)?);
    let mut utterances = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            index,
            message: e.to_string(),
        })?;
        utterances.push(Utterance {
            id: rec.id,
            category: rec.category,
            text: rec.text,
            embedding: rec.embedding.into_iter().map(S::of).collect(),
        });
    }
    Corpus::new(utterances)
}

fn save_jsonl<S: Scalar>(corpus: &Corpus<S>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for u in corpus.utterances() {
        let rec = JsonRecord {
            id: u.id.clone(),
            category: u.category.clone(),
            text: u.text.clone(),
            embedding: u.embedding.iter().map(|v| v.as_f64()).collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::BadFormat(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn load_binary<S: Scalar>(path: &Path) -> Result<Corpus<S>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::BadFormat("file too short for magic".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::BadFormat(format!(
            "bad magic {magic:?}, expected {BINARY_MAGIC:?}"
        )));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)
        .map_err(|_| Error::BadFormat("file too short for version".into()))?;
    if version[0] != BINARY_VERSION {
        return Err(Error::BadFormat(format!(
            "unsupported version {}, expected {BINARY_VERSION}",
            version[0]
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| Error::BadFormat("file too short for row count".into()))?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)
        .map_err(|_| Error::BadFormat("file too short for dimension".into()))?;
    let d = u32::from_le_bytes(u32buf) as usize;

    let meta = meta_path(path);
    let meta_reader = BufReader::new(File::open(&meta).map_err(|e| {
        Error::BadFormat(format!("companion {} unreadable: {e}", meta.display()))
    })?);
    let mut metas = Vec::with_capacity(n);
    for (index, line) in meta_reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetaRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            index,
            message: format!("companion meta: {e}"),
        })?;
        metas.push(rec);
    }
    if metas.len() != n {
        return Err(Error::BadFormat(format!(
            "companion meta has {} rows, data file declares {n}",
            metas.len()
        )));
    }

    let mut utterances = Vec::with_capacity(n);
    let mut row = vec![0u8; d * 4];
    for (index, meta_rec) in metas.into_iter().enumerate() {
        r.read_exact(&mut row).map_err(|_| Error::Malformed {
            index,
            message: "data file truncated".into(),
        })?;
        let embedding = row
            .chunks_exact(4)
            .map(|b| S::of(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))))
            .collect();
        utterances.push(Utterance {
            id: meta_rec.id,
            category: meta_rec.category,
            text: meta_rec.text,
            embedding,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::BadFormat("trailing bytes after declared rows".into()));
    }
    Corpus::new(utterances)
}

fn save_binary<S: Scalar>(corpus: &Corpus<S>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&[BINARY_VERSION])?;
    w.write_all(&(corpus.len() as u32).to_le_bytes())?;
    w.write_all(&(corpus.dim() as u32).to_le_bytes())?;
    for u in corpus.utterances() {
        for v in &u.embedding {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;

    let mut mw = BufWriter::new(File::create(meta_path(path))?);
    for u in corpus.utterances() {
        let rec = MetaRecord {
            id: u.id.clone(),
            category: u.category.clone(),
            text: u.text.clone(),
        };
        serde_json::to_writer(&mut mw, &rec).map_err(|e| Error::BadFormat(e.to_string()))?;
        mw.write_all(b"\n")?;
    }
    mw.flush()?;
    Ok(())
}

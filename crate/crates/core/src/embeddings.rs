//! Text-branch inputs.
//!
//! Two providers produce the embedding of a prompt: an [`EmbeddingStore`] loaded
//! from a precomputed `LLMREMB1` file (e.g. sentence-encoder exports), and a
//! [`HashEmbedder`] that needs nothing but the prompt text. The ranker only
//! sees the dimension, so either can back a training run.
//!
//! File layout, all integers and floats little-endian:
//!
//! ```text
//! "LLMREMB1" | u32 dim | u32 count | count × (u16 id_len | id bytes | dim × f32)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::binio::{read_array, read_f32, read_str16, read_u32, write_f32, write_str16, write_u32};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::text::{hash_token, tokens};

const MAGIC: &[u8; 8] = b"LLMREMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum();
        dot / (self.norm() * other.norm())
    }
}

/// Anything that can produce the embedding of a record.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;

    /// Short description recorded in run manifests, e.g. `hash:256`.
    fn tag(&self) -> String;

    fn embed(&self, sample_id: &str, prompt: &str) -> Result<EmbeddingVector>;
}

/// Embeds every record of `d`, in order, as an `n × dim` matrix.
pub fn embed_dataset(provider: &dyn EmbeddingProvider, d: &Dataset) -> Result<Array2<f64>> {
    let dim = provider.dim();
    let rows: Vec<EmbeddingVector> = d
        .records
        .par_iter()
        .map(|r| provider.embed(&r.sample_id, &r.prompt))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((d.len(), dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(&rows) {
        for (d, s) in dst.iter_mut().zip(&src.values) {
            *d = f64::from(*s);
        }
    }
    Ok(out)
}

/// Precomputed embeddings keyed by sample_id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    index: HashMap<String, usize>,
    provider_tag: String,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provider_tag: impl Into<String>) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
            provider_tag: provider_tag.into(),
        }
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, vector: EmbeddingVector) -> Result<()> {
        let sample_id = sample_id.into();
        if vector.dim() != self.dim {
            return Err(Error::DimMismatch {
                what: "embedding",
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if vector.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite embedding for {sample_id:?}")));
        }
        if self.index.contains_key(&sample_id) {
            return Err(Error::DuplicateId(sample_id));
        }
        self.index.insert(sample_id.clone(), self.ids.len());
        self.ids.push(sample_id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, sample_id: &str) -> Option<&EmbeddingVector> {
        self.index.get(sample_id).map(|&i| &self.vectors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let header = |e: std::io::Error| Error::Format(format!("embedding header: {e}"));
        let magic: [u8; 8] = read_array(&mut r).map_err(header)?;
        if &magic != MAGIC {
            return Err(Error::Format("embedding file magic mismatch".into()));
        }
        let dim = read_u32(&mut r).map_err(header)? as usize;
        let count = read_u32(&mut r).map_err(header)? as usize;
        let mut store = EmbeddingStore::new(dim, format!("file:{}", path.display()));
        for k in 0..count {
            let id = read_str16(&mut r).map_err(|e| match e.kind() {
                std::io::ErrorKind::InvalidData => Error::Format(format!("entry {k}: id is not UTF-8")),
                _ => Error::Truncated(k),
            })?;
            let values = (0..dim)
                .map(|_| read_f32(&mut r))
                .collect::<std::io::Result<Vec<f32>>>()
                .map_err(|_| Error::Truncated(k))?;
            store.insert(id, EmbeddingVector { values })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        write_u32(&mut w, self.dim as u32).map_err(io)?;
        write_u32(&mut w, self.len() as u32).map_err(io)?;
        for (id, v) in self.iter() {
            write_str16(&mut w, id).map_err(io)?;
            for x in &v.values {
                write_f32(&mut w, *x).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        self.provider_tag.clone()
    }

    /// Lookup by id; a missing id is an error, never a zero vector.
    fn embed(&self, sample_id: &str, _prompt: &str) -> Result<EmbeddingVector> {
        self.get(sample_id)
            .cloned()
            .ok_or_else(|| Error::MissingId(sample_id.to_string()))
    }
}

/// Signed feature hashing of word unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 16 {
            return Err(Error::InvalidConfig(format!("hash embedding dim must be >= 16, got {dim}")));
        }
        Ok(Self { dim })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("hash:{}", self.dim)
    }

    fn embed(&self, _sample_id: &str, prompt: &str) -> Result<EmbeddingVector> {
        hash_embed(prompt, self.dim)
    }
}

/// L2-normalized signed hashing of unigrams and bigrams into `dim` buckets.
pub fn hash_embed(prompt: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim < 16 {
        return Err(Error::InvalidConfig(format!("hash embedding dim must be >= 16, got {dim}")));
    }
    let trimmed = prompt.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut toks = tokens(trimmed);
    if toks.is_empty() {
        // punctuation-only prompts still get a deterministic direction
        toks.push(trimmed.to_string());
    }
    let mut acc = vec![0.0f64; dim];
    let mut add = |h: u64| {
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 40) & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    };
    for t in &toks {
        add(hash_token(b'u', t));
    }
    for pair in toks.windows(2) {
        add(hash_token(b'b', &format!("{} {}", pair[0], pair[1])));
    }
    let mut norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every hashed term cancelled out; fall back to the unsigned histogram
        for t in &toks {
            acc[(hash_token(b'u', t) % dim as u64) as usize] += 1.0;
        }
        norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok(EmbeddingVector {
        values: acc.iter().map(|v| (v / norm) as f32).collect(),
    })
}

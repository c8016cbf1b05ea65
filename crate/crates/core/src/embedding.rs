//! Vector primitives and the embedding data model.
//!
//! Embeddings are stored as `f32` (the on-disk precision) but every
//! computation widens to `f64` first.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

/// Speaker identity attached to an utterance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeakerLabel(String);

impl SpeakerLabel {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidSpec("speaker id must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeakerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A raw (non-normalized) utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub utterance_id: String,
    vector: Vec<f32>,
    /// Source audio duration in seconds, 0 when unknown.
    pub duration_s: f64,
}

impl Embedding {
    pub fn new(utterance_id: impl Into<String>, vector: Vec<f32>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if vector.is_empty() {
            return Err(Error::EmptyList);
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(utterance_id));
        }
        Ok(Self {
            utterance_id,
            vector,
            duration_s: 0.0,
        })
    }

    /// Builds an embedding from `f64` coordinates, rounding to `f32` storage.
    pub fn from_f64(utterance_id: impl Into<String>, vector: &[f64]) -> Result<Self> {
        Self::new(utterance_id, vector.iter().map(|&v| v as f32).collect())
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.vector
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if !(na >= ZERO_NORM && nb >= ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Euclidean norm of the raw embedding.
pub fn magnitude(e: &Embedding) -> f64 {
    e.vector
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Componentwise arithmetic mean.
pub fn mean_vector<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or(Error::EmptyList)?.as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        let v = v.as_ref();
        check_dims(first, v)?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Embeddings keyed by utterance id, all sharing one dimension.
///
/// Iteration follows insertion order so that anything written back out is
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    entries: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_embeddings(dim: usize, embeddings: impl IntoIterator<Item = Embedding>) -> Result<Self> {
        let mut store = Self::new(dim);
        for e in embeddings {
            store.insert(e)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, e: Embedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: e.dim(),
            });
        }
        if self.index.contains_key(&e.utterance_id) {
            return Err(Error::DuplicateId(e.utterance_id));
        }
        self.index.insert(e.utterance_id.clone(), self.entries.len());
        self.entries.push(e);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn require(&self, id: &str) -> Result<&Embedding> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Embedding> {
        self.index.get(id).map(|&i| &mut self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.entries.iter()
    }
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.entries == other.entries
    }
}

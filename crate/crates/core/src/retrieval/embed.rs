use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("embedding provider: {0}")]
    Provider(String),
}

/// Unit-length embedding.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "")]
pub struct EmbeddingVector<T: Real> {
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for EmbeddingVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingVector(dim={})", self.data.len())
    }
}

impl<T: Real> EmbeddingVector<T> {
    /// L2-normalizes `raw`.
    pub fn normalized(raw: Vec<T>) -> Result<Self, EmbedError> {
        let norm = raw.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm == T::zero() || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Self { data: raw.into_iter().map(|x| x / norm).collect() })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
    }

    /// Cosine similarity; both sides are unit vectors so this is the dot
    /// product, clamped into [-1, 1] against rounding.
    pub fn cosine(&self, other: &Self) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        let dot = self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        dot.max(-T::one()).min(T::one())
    }

    pub fn cast<U: Real>(&self) -> EmbeddingVector<U> {
        EmbeddingVector { data: self.data.iter().map(|&x| U::from(x).expect("finite component")).collect() }
    }
}

/// Text embedding provider.
pub trait Embedder<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError>;
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic offline embedder: character trigram counts hashed into
/// `dim` buckets, L2-normalized.
///
/// Text is lowercased, runs of non-alphanumerics collapse to one space, and
/// one space pads each end so word boundaries form trigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgramEmbedder {
    pub dim: usize,
}

impl Default for NgramEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl NgramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn normalize_text(text: &str) -> String {
        let mut out = String::from(" ");
        for c in text.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                out.push(c);
            } else if !out.ends_with(' ') {
                out.push(' ');
            }
        }
        if !out.ends_with(' ') {
            out.push(' ');
        }
        out
    }

    /// Bucket counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<u32> {
        let norm = Self::normalize_text(text);
        let chars: Vec<char> = norm.chars().collect();
        let mut counts = vec![0u32; self.dim];
        for w in chars.windows(3) {
            let gram: String = w.iter().collect();
            counts[(fnv1a64(gram.as_bytes()) % self.dim as u64) as usize] += 1;
        }
        counts
    }
}

impl<T: Real> Embedder<T> for NgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let raw = self.counts(text).into_iter().map(|c| T::from(c).expect("count fits")).collect();
        EmbeddingVector::normalized(raw)
    }
}

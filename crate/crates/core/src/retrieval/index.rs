use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::embed::{EmbedError, Embedder, EmbeddingVector};
use crate::model::ApiDoc;
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("duplicate index id `{0}`")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Component,
    ApiDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IndexEntry<T: Real> {
    pub id: String,
    pub kind: EntryKind,
    pub vector: EmbeddingVector<T>,
    /// The exact text that was embedded.
    pub text: String,
    /// sha256 of `text`, hex.
    pub text_hash: String,
}

pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Exact cosine top-k index. Single writer, any number of readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "IndexRepr<T>", bound = "")]
pub struct VectorIndex<T: Real> {
    dim: usize,
    entries: Vec<IndexEntry<T>>,
    #[serde(skip)]
    by_id: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = ""))]
struct IndexRepr<T: Real> {
    dim: usize,
    entries: Vec<IndexEntry<T>>,
}

impl<T: Real> From<IndexRepr<T>> for VectorIndex<T> {
    fn from(r: IndexRepr<T>) -> Self {
        let mut index = VectorIndex { dim: r.dim, entries: r.entries, by_id: BTreeMap::new() };
        index.reindex();
        index
    }
}

/// Total order used by search: score descending, then id ascending.
fn rank_order<T: Real>(a: &(String, T), b: &(String, T)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

impl<T: Real> VectorIndex<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new(), by_id: BTreeMap::new() }
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

    pub fn entries(&self) -> &[IndexEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry<T>> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    fn reindex(&mut self) {
        self.by_id = self.entries.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
    }

    pub fn insert(&mut self, entry: IndexEntry<T>) -> Result<(), IndexError> {
        if entry.vector.dim() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, found: entry.vector.dim() });
        }
        if self.by_id.contains_key(&entry.id) {
            return Err(IndexError::DuplicateId(entry.id));
        }
        self.by_id.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn add_text(
        &mut self,
        embedder: &dyn Embedder<T>,
        id: impl Into<String>,
        kind: EntryKind,
        text: impl Into<String>,
    ) -> Result<(), IndexError> {
        let (id, text) = (id.into(), text.into());
        if self.by_id.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let vector = embedder.embed(&text)?;
        let text_hash = text_hash(&text);
        self.insert(IndexEntry { id, kind, vector, text, text_hash })
    }

    pub fn remove(&mut self, id: &str) -> Option<IndexEntry<T>> {
        let i = self.by_id.remove(id)?;
        let e = self.entries.remove(i);
        self.reindex();
        Some(e)
    }

    /// The `min(k, len)` best entries by cosine, ties broken by id.
    pub fn search(&self, query: &EmbeddingVector<T>, k: usize) -> Result<Vec<(String, T)>, IndexError> {
        self.search_filtered(query, k, |_| true)
    }

    pub fn search_filtered(
        &self,
        query: &EmbeddingVector<T>,
        k: usize,
        keep: impl Fn(&IndexEntry<T>) -> bool,
    ) -> Result<Vec<(String, T)>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, found: query.dim() });
        }
        let mut scored: Vec<(String, T)> =
            self.entries.iter().filter(|e| keep(e)).map(|e| (e.id.clone(), e.vector.cosine(query))).collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }
}

/// Embedding text of an api doc: qualified name plus description.
pub fn api_doc_text(doc: &ApiDoc) -> String {
    format!("{} {}", doc.qualified_name(), doc.description)
}

/// One entry per doc, keyed by `app.api`.
pub fn index_api_docs<T: Real>(
    index: &mut VectorIndex<T>,
    embedder: &dyn Embedder<T>,
    docs: &[ApiDoc],
) -> Result<(), IndexError> {
    for d in docs {
        index.add_text(embedder, d.qualified_name(), EntryKind::ApiDoc, api_doc_text(d))?;
    }
    Ok(())
}

//! Embeddings, exact cosine search, and retrieval-quality metrics.

mod embed;
mod index;
mod ir;

pub use embed::{EmbedError, Embedder, EmbeddingVector, NgramEmbedder};
pub use index::{api_doc_text, index_api_docs, text_hash, EntryKind, IndexEntry, IndexError, VectorIndex};
pub use ir::{ir_metrics, IrError, IrMetrics};

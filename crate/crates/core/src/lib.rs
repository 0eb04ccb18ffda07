//! Generalized-policy learning with a reusable component library.
//!
//! Most numeric code is generic over [`num::Real`]; the aliases below fix
//! the usual choices.

pub mod model;
pub mod num;
pub mod lang;
pub mod miniworld;
pub mod validator;
pub mod gateway;
pub mod retrieval;
pub mod repository;
pub mod agents;
pub mod cluster;
pub mod orchestrator;
pub mod metrics;
pub mod settings;

/// Embedding vectors as stored in the index.
pub type Vector = retrieval::EmbeddingVector<f64>;
/// Exact ratios for counts-derived metrics.
pub type ExactRatio = num_rational::Ratio<i64>;

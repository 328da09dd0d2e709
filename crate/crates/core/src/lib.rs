//! Hierarchical intent clustering over embedding corpora.
//!
//! The engine runs in stages: an attention layer learns per-dimension feature
//! weights for the raw embeddings (reconstruction pre-training followed by
//! KL-sharpened fine-tuning against cluster soft assignments), an
//! ANN-accelerated k-means produces the flat leaf clusters, and an annealed
//! agglomerative pass merges leaves into a tree, splitting oversized merges
//! back apart with a contrastive 2-means refinement. On top of that,
//! [`stability`] sweeps stratified sample sizes and reports the smallest size
//! at which the tree stops changing.
//!
//! All numeric code is generic over [`Scalar`] (f32 or f64); the aliases below
//! pin the common instantiations. Every random choice derives from one
//! top-level seed plus fixed per-module offsets (see [`config::seeds`]), and
//! the whole crate is single-threaded, so equal inputs give byte-equal
//! outputs.

pub mod ann;
pub mod attention;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod stability;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CorpusF32 = corpus::Corpus<f32>;
pub type CorpusF64 = corpus::Corpus<f64>;
pub type MatF32 = linalg::Mat<f32>;
pub type MatF64 = linalg::Mat<f64>;
pub type AttentionParamsF64 = attention::AttentionParams<f64>;
pub type ClusterSetF64 = ann::ClusterSet<f64>;
pub type HierarchyF32 = hierarchy::Hierarchy<f32>;
pub type HierarchyF64 = hierarchy::Hierarchy<f64>;

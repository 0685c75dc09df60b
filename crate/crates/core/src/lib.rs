//! Cost-aware prompt-to-model routing.
//!
//! The pipeline runs in four stages:
//!
//! ```text
//! JSONL records ──► dataset (validate, filter, stratified split)
//!                     │
//!                     ├─► features   (interpretable f(x) + proxy classifier block)
//!                     └─► embeddings (precomputed file or signed hashing)
//!                            │
//!                            ▼
//!                     ranker (dual-branch MLP, MSE + listwise KL, AdamW)
//!                            │
//!                            ▼
//!                     routing (argmax, oracle, baselines, metrics, attribution)
//! ```
//!
//! Utilities are cost-adjusted, `u = q - lambda * c`, so a trained router needs no
//! cost term at inference: it routes each prompt to the highest predicted utility.

pub mod binio;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod ranker;
pub mod routing;
pub mod synthetic;
mod text;

pub use dataset::{Dataset, ModelPool, PromptRecord, SplitSpec, StratifyBy};
pub use embeddings::{EmbeddingProvider, EmbeddingStore, EmbeddingVector, HashEmbedder};
pub use error::{Error, Result};
pub use features::{FeatureGroup, FeatureMatrix, FeatureSchema, FeatureVector, ProxyModel};
pub use ranker::{RankerParams, TrainConfig, TrainingLog, UtilityTargets};
pub use routing::{EvalReport, RouterDecision};

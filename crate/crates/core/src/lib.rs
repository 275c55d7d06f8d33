//! Feature attribution for tabular classifiers served as next-token logprob endpoints.
//!
//! Rows are serialized into `key:value` prompts, a backend returns top-k
//! next-token logprobs, a verbalizer folds those into class probabilities,
//! and a sampled-coalition estimator scores each feature by how much the
//! class distribution moves when the feature is omitted. Deletion curves
//! and rank correlation check the resulting rankings.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod attribution;
pub mod backend;
pub mod cache;
pub mod cli;
pub mod error;
pub mod faithfulness;
mod fsutil;
pub mod rank;
pub mod tabular;
pub mod verbalizer;

pub use error::{Error, Result};

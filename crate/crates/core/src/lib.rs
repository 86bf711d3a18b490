//! Zero-shot task specification over frozen embeddings.
//!
//! A task is given as a pool of goal embeddings (optionally with matching
//! initial states). Observations in a [`store::DatasetStore`] are scored by
//! similarity to those goals, which drives goal and action retrieval
//! ([`eval`]) and reward labeling ([`reward`]). [`synthgen`] builds
//! synthetic datasets with known ground truth.

pub mod error;
pub mod eval;
pub mod reward;
pub mod store;
pub mod synthgen;
pub mod zest;

pub use error::{Error, Result};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

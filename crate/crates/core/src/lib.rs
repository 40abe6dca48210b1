//! Desk-scale reference implementations of the architectural mechanisms in the
//! Phi-3 model family: per-head blocksparse attention with KV-cache eviction,
//! grouped-query attention, dense/sparse layer alternation, top-2
//! mixture-of-experts routing, parameter and memory accounting for the
//! published configurations, int4 weight quantization, and the chat template.
//!
//! Everything here runs at toy scale on a CPU and is verified against
//! independent oracles; no real checkpoints are loaded.

pub mod archconfig;
pub mod attention;
pub mod error;
pub mod kvcache;
pub mod moe;
pub mod quant;
pub mod scaling;
pub mod sparsity;

pub use error::{Error, Result};

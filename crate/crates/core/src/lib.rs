//! POI verification: match a street-view observation (signboard image plus
//! shot coordinates) to the archived point of interest it depicts.
//!
//! Two families of pipelines are provided:
//!
//! * a staged pipeline: exact radius filter over a geohash-bucketed index,
//!   simulated OCR with noisy-channel name correction, and name-similarity
//!   ranking (optionally tie-broken by signboard outline features);
//! * an embedding pipeline: a multimodal image/geohash encoder fused with
//!   bidirectional cross-attention, searched with a random-hyperplane tree
//!   forest (optionally reranked with the staged ranker).
//!
//! [`evalbench`] measures both on synthetic corpora produced by [`model`].

pub mod annindex;
pub mod embedder;
pub mod error;
pub mod evalbench;
pub mod geoindex;
pub mod glyph;
pub mod jsonl;
pub mod model;
pub mod pipeline;
pub mod signboard;

pub use error::{Error, Result};

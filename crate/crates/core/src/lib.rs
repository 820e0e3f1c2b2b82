//! Curation engine for audio-text training corpora.
//!
//! The crate covers the data path from raw caption manifests to packed
//! training sequences: manifest I/O, segmentation planning, heuristic text
//! filtering, scoring through a pluggable judge client, percentile-based
//! quality fusion, softmax-temperature resampling, near-duplicate removal,
//! token-budget mixture planning, sequence packing, codec token layout,
//! guided decoding, instruction-data simulation, and cycle-consistency
//! evaluation.
//!
//! Numeric kernels (percentile ranks, Gumbel perturbation, guidance
//! combination, cosine similarity) are generic over [`num_traits::Float`];
//! the pipeline instantiates them with [`Scalar`].

pub mod cfg;
pub mod codec;
pub mod cycle;
pub mod dedup;
pub mod fusion;
pub mod judge;
pub mod manifest;
pub mod mixture;
pub mod pack;
pub mod record;
pub mod resample;
pub mod seed;
pub mod segment;
pub mod sft;
pub mod text_rules;

/// Scalar type used by the pipeline when instantiating the generic kernels.
pub type Scalar = f64;

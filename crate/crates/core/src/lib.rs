//! Language-assisted image clustering on precomputed vision-language
//! embeddings.
//!
//! The pipeline selects dataset-relevant nouns, re-expresses each image as a
//! ridge combination of those nouns, clusters the result, keeps the
//! neighbor-consistent pseudo-labels and finally learns one semantic center
//! per cluster.

pub mod centers;
pub mod cluster;
pub mod diagnose;
pub mod error;
pub mod filter;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod repr;
pub mod synth;
pub mod vocab;

mod linalg;

pub use error::{Error, Result};

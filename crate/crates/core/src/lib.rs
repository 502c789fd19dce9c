//! Temporal pyramids of frame-feature flow for action recognition.
//!
//! Frames arrive as per-frame CNN feature vectors. Videos are cut into
//! snippets (at binary-code key-frames or with fixed windows), each snippet
//! becomes a pyramid of feature differences, pyramids are reduced with PCA,
//! quantised against k-means codebooks into per-video histograms and
//! classified with one-vs-rest χ²-kernel SVMs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod classifier;
pub mod codebook;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod feature_io;
pub mod hashing;
pub(crate) mod persist;
pub mod pipeline;
pub mod pyramid;
pub mod reduction;
pub mod seed;
pub mod snippets;
pub mod synthetic;

pub use error::{Error, Result};

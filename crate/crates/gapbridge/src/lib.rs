//! File formats, command-line driver and multi-threaded evaluation on top of
//! [`gapbridge_core`].
//!
//! Embeddings live in `EMB1` files. Gaussian parameters, reverse mappings and
//! fitted models are small JSON manifests that point at `EMB1` blobs, with
//! paths resolved relative to the manifest's own directory.

pub mod cli;
pub mod config;
pub mod embfile;
pub mod error;
pub mod model;
pub mod parallel;
pub mod params;
pub mod prompts;
pub mod report;

pub use error::{Error, Result};

//! Embedding-space machinery for bridging the gap between image and text
//! embeddings of a contrastive encoder.
//!
//! The image−text bias is modeled as a multivariate Gaussian, estimated from
//! paired data or fitted from unpaired images or text alone, and paired with
//! a small reverse-mapping network that re-projects mapped embeddings toward
//! the text region. Everything here is `no_std` + `alloc`; file IO and the
//! command line live in the `gapbridge` crate.

#![no_std]
// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod emb;
pub mod error;
pub mod eval;
pub mod gapmap;
pub mod gauss;
pub mod linalg;
pub mod optim;
pub mod prompt;
pub mod revmap;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use emb::EmbeddingMatrix;
pub use error::{Error, Result};
pub use gauss::GaussianParams;
pub use linalg::Matrix;
pub use rng::Rng;

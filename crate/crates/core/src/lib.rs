//! Entropy-sieved tile classification for artwork attribution.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! pipeline: luma conversion and Shannon entropy, overlapping tile grids and the
//! entropy sieve, tile dataset assembly, a small convolutional classifier with
//! backpropagation and Grad-CAM, painting-level aggregation with two-model
//! ensemble weighting, per-pixel probability maps, and a synthetic corpus
//! generator. File formats and the command-line driver live in the `atelier`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod classifier;
pub mod dataset;
mod error;
pub mod exec;
pub mod imaging;
pub mod probmap;
pub mod synthgen;
pub mod tiler;

pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use imaging::{histogram, shannon_entropy, to_luma, Histogram, ImageBuffer, Rect};
pub use tiler::{coverage_fraction, grid_tiles, sieve, TileRecord, TileSpec};

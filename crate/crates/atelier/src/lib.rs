//! File formats, dataset IO and the command-line driver for `atelier-core`.

pub mod cli;
pub mod corpus;
mod error;
pub mod image_io;
pub mod model_io;
pub mod parallel;
pub mod tables;

pub use error::{Error, Result};

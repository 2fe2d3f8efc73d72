//! Unsupervised joint learning of graph-to-text and text-to-graph conversion
//! by iterative back translation over non-parallel graph and text corpora.

pub mod checkpoint;
pub mod cycle;
pub mod data;
pub mod error;
pub mod eval;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};

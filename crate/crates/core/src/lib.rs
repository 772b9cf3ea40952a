//! Top-N book recommendation benchmarks over a heterogeneous book graph.

pub mod analytics;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod linalg;
pub mod neural;
pub mod persist;
pub mod recommend;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};

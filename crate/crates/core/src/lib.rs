//! Graph-to-collocation transformer: joint lexical-function classification
//! and BIO tagging of collocation bases and collocates, with dependency
//! structure injected into self-attention.
//!
//! Module map:
//! - [`tensor`]: dense tensors and tape-based reverse-mode autodiff
//! - [`relations`]: dependency graphs and the relation matrix
//! - [`model`]: graph-aware encoder and the joint decoder heads
//! - [`bio`]: tag inventory and span encoding/decoding
//! - [`dataset`]: corpus ingestion, collocation matching and splitting
//! - [`metrics`]: accuracy, span P/R/F1, confusion matrices, rank correlation
//! - [`train`]: run configuration, optimizer and early-stopped training
//! - [`checkpoint`]: binary checkpoint format
//! - [`synthetic`]: generated corpora for controlled experiments

pub mod bio;
pub mod checkpoint;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod relations;
pub mod synthetic;
pub mod tensor;
pub mod train;

//! Bit-flip robustness workbench for graph neural networks.
//!
//! Dense f32 tensors with a small reverse-mode tape, CSR graphs, fault
//! injection at weights, embeddings and adjacency, robust neighborhood
//! aggregation, GCN/GIN models, a trainer and the sweep/profile harness.

pub mod aggregate;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod fault;
pub mod graph;
pub mod harness;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use aggregate::{Aggregator, Mode, TrimCounts};
pub use error::{Error, Result};
pub use fault::{FaultSpec, InjectionReport, Site};
pub use graph::{Graph, Masks, Task};
pub use tensor::DenseMatrix;

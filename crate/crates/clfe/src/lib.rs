//! Graph neural networks with conditional local feature encoding (CLFE).
//!
//! CLFE wraps any message-passing layer: the layer's hidden state `h` is
//! concatenated with the layer input `H`, passed through a learned linear
//! map to produce an encoding `V = Concat(H, h)·W + b`, and the layer output
//! becomes `σ(V + h) + H`. The crate provides:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff and
//!   a finite-difference gradient checker,
//! - [`graph`]: CSR graphs, symmetric adjacency normalization, batching,
//!   synthetic dataset generators, and line-delimited graph file I/O,
//! - [`layers`]: five backbones (GCN, GraphSAGE, GAT, MoNet, GatedGCN)
//!   behind a common [`layers::Backbone`] trait, selected by name, plus the
//!   CLFE composition and layer stack,
//! - [`heads`]: task heads and evaluation metrics for node/graph/edge
//!   classification and graph regression,
//! - [`training`]: Adam, reduce-on-plateau scheduling, a seeded train loop,
//!   and multi-seed aggregation,
//! - [`experiment`]: config-driven baseline-vs-CLFE comparisons with CSV and
//!   markdown reports.

pub mod experiment;
pub mod graph;
pub mod heads;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod training;

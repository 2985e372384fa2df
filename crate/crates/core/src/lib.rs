//! DT+GNN: graph neural networks whose every update step is a small decision tree.
//!
//! The pipeline has four stages:
//!
//! 1. [`gnn`] trains a differentiable message-passing network whose node states are
//!    categorical (Gumbel-Softmax with a straight-through estimator) and whose
//!    aggregation is a plain per-state neighbor count.
//! 2. [`distill`] records every MLP's inputs and outputs and replaces each MLP with a
//!    CART tree over state indicators, neighbor-state counts and pairwise count
//!    comparisons.
//! 3. [`prune`] shrinks the trees with reduced-error pruning judged end-to-end, plus a
//!    lossy greedy schedule.
//! 4. [`explain`] turns per-tree TreeShap attributions into node importances by
//!    propagating them through the layers.
//!
//! [`datagen`] provides the synthetic benchmarks and a TUDataset reader, and
//! [`harness`] wires everything into cross-validated experiments and inspector bundles.

pub mod autodiff;
pub mod datagen;
pub mod distill;
pub mod error;
pub mod exec;
pub mod explain;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod prune;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Exec;

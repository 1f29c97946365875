//! A workbench for the minimum cost multicut problem (weighted correlation
//! clustering).
//!
//! The crate solves multicut instances three ways and provides the tooling
//! around them:
//!
//! * [`solvers`] — exact solvers (set-partition enumeration plus an
//!   independent edge-labeling oracle) and the GAEC greedy contraction
//!   heuristic, optionally time-bounded.
//! * [`gnn`] — a trainable message-passing solver built on the signed
//!   normalized graph Laplacian, with a cycle-consistency loss and
//!   feasibility rounding.
//! * [`datasets`] — generators for the IrisMP and RandomMP synthetic
//!   instance families and the kNN scaling graphs, with ground-truth
//!   labeling and on-disk serialization.
//! * [`bench`] — benchmark records and CSV reporting (optimal objective
//!   ratio, harmonic mean, wall-clock tables).
//!
//! Instances are simple, connected, real-edge-weighted graphs
//! ([`graph::WeightedGraph`]); a solution is a binary edge labeling where 1
//! marks a cut edge, feasible iff no cycle is cut exactly once.

pub mod bench;
pub mod cycles;
pub mod datasets;
pub mod gnn;
pub mod graph;
pub mod nn;
pub mod solvers;

pub use graph::{EdgeLabeling, NodePartition, WeightedGraph};

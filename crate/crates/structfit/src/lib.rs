//! A laboratory for studying graph-structure overfitting in message-passing
//! GNNs: synthetic graph distributions with a graph-less teacher, a minimal
//! reverse-mode autodiff engine, five message-passing architectures, a
//! max-margin oracle that certifies what gradient descent converges to, and
//! the R-COV degree-regularization transform.
//!
//! The crate is organized around small, pure modules:
//!
//! - [`graph`]: canonical graph representation, degree statistics, pooled
//!   feature aggregates, JSON-lines serialization
//! - [`synth`]: random graph generators (GNP, regular, BA, star) and the
//!   graph-less linear teacher of the Sum task
//! - [`autodiff`]: dense reverse-mode tape with exactly the primitives the
//!   models and losses need
//! - [`models`]: GraphConv / GIN / GATv2 / GraphTransformer / mean-aggregation
//!   variants plus the 1-layer linear GNN
//! - [`train`]: full-batch GD and mini-batch Adam with norm-ratio and
//!   alignment telemetry, learning curves, stratified k-fold
//! - [`margin`]: the 2d-dimensional hard-margin QP, its brute-force oracle,
//!   and the extrapolation-condition checkers
//! - [`rcov`]: the R-COV transform that adds edges between low-degree nodes
//!   to reduce the degree coefficient of variation
//! - [`tu`]: parser for the TU graph-classification text format

pub mod autodiff;
pub mod graph;
pub mod margin;
pub mod models;
pub mod rcov;
pub mod rng;
pub mod synth;
pub mod train;
pub mod tu;

pub use graph::{degree_stats, DegreeStats, Graph, GraphError, LabeledGraph, Topology};
pub use margin::{MarginProblem, MarginSolution};
pub use models::{Arch, GnnConfig, LinearGnnParams, ModelParams};
pub use rcov::{RcovConfig, RcovResult};
pub use synth::{DatasetSpec, GraphDist, TeacherModel};
pub use train::{Loss, Model, ModelSpec, OptimizerKind, TrainConfig, TrainLog};
pub use tu::TuDataset;

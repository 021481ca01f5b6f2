//! Multivariate Polya tree meta-analysis of median event-time summaries.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod b64;
pub mod data;
pub mod elicit;
pub mod error;
pub mod kernel;
pub mod partition;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod simulation;
pub mod special;
pub mod summaries;
pub mod tree_dist;

pub use error::{Error, Result};
pub use partition::{NodePath, Triple};
pub use scalar::Real;
pub use tree_dist::TreeDistribution;

pub type DistributionSpec = special::DistributionSpec<f64>;
pub type PartitionTree = partition::PartitionTree<f64>;
pub type KernelWeights = kernel::KernelWeights<f64>;

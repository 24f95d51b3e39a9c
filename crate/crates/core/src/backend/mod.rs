//! Global mapper: temporal nodes, pruning, sparsification and optimization.

pub mod grid;
pub mod marginals;
pub mod metrics;
pub mod optimize;
pub mod prune;
pub mod sparsify;
pub mod temporal;
mod union_find;
pub mod worker;

pub use grid::GridIndex;
pub use marginals::marginal_covariances;
pub use metrics::{degree_percentile, metric_arps, metric_t_rel};
pub use optimize::{optimize, OptimizeOutcome, OptimizerConfig};
pub use prune::{node_weight, propagate_chain_covariances, prune_cells, PruneReport, WeightMode};
pub use sparsify::chow_liu_sparsify;
pub use temporal::make_temporal_node;
pub use union_find::UnionFind;
pub use worker::{Backend, Command, Snapshot, WorkerConfig};

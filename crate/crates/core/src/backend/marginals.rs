use std::collections::BTreeMap;

use super::optimize::{assemble, block_layout, resolve_gauge, OptimizerConfig};
use crate::error::Result;
use crate::geometry::Covariance3;
use crate::graph::{NodeId, PoseGraph};

/// Marginal covariance of every live node under the linearized graph at its
/// current poses, with `gauge` (default: smallest live id) held fixed. The
/// gauge itself gets a zero covariance.
pub fn marginal_covariances(graph: &PoseGraph, gauge: Option<NodeId>) -> Result<BTreeMap<NodeId, Covariance3>> {
    let gauge = resolve_gauge(graph, gauge)?;
    let layout = block_layout(graph, gauge);
    let poses = graph.poses();
    let sys = assemble(graph, &poses, &layout, &OptimizerConfig::default(), false);
    let factor = sys.factorize(&vec![0.0; sys.dim()])?;
    let ids: Vec<NodeId> = layout.keys().copied().collect();
    let blocks: Vec<usize> = ids.iter().map(|id| layout[id]).collect();
    let inv = factor.inverse_diagonal_blocks(&blocks);
    let mut out: BTreeMap<NodeId, Covariance3> = ids
        .into_iter()
        .zip(inv)
        .map(|(id, m)| (id, Covariance3::from_matrix_unchecked(m)))
        .collect();
    out.insert(gauge, Covariance3::zero());
    Ok(out)
}

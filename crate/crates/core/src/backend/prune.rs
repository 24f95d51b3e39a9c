//! Grid-cell node pruning.
//!
//! Every occupied cell keeps its highest-weighted node. Each eliminated node
//! is bridged out: every pair of its distinct neighbors gets a new edge whose
//! measurement is composed through the eliminated node, so the graph stays
//! connected. The clique of new bridges is thinned at once to its
//! maximum-information spanning forest, which keeps fill-in local. Surviving
//! covariances are then re-propagated along the odometry chain.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::grid::GridIndex;
use super::marginals::marginal_covariances;
use super::sparsify::chow_liu_sparsify_among;
use crate::geometry::{
    clamped_inverse, compose, compound_covariance, inverse_covariance, parameter_to_perturbation,
    perturbation_to_parameter, Covariance3, Transform2D,
};
use crate::graph::{
    information_from_covariance, Edge, EdgeId, EdgeKind, Kernel, MixtureComponent, NodeId, PoseGraph, W_MAX,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Trace of the node's information (inverse of its covariance).
    NodeInfo,
    /// Sum of the traces of the incident edge informations.
    EdgeInfo,
}

impl std::str::FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "node" | "node_info" => Ok(WeightMode::NodeInfo),
            "edge" | "edge_info" => Ok(WeightMode::EdgeInfo),
            other => Err(format!("unknown weight mode '{other}' (expected node or edge)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    pub eliminated: Vec<NodeId>,
    /// Average nodes per occupied cell after pruning.
    pub npc: f64,
    pub elapsed_ms: f64,
    /// Edges created by bridging, summed over all eliminations.
    pub edges_added: usize,
    /// Largest `added - removed` over single eliminations.
    pub max_net_growth: i64,
}

/// Sum of squared planar distances from `id` to the other nodes of its 3×3
/// cell block.
fn geometric_weight(graph: &PoseGraph, grid: &GridIndex, id: NodeId) -> f64 {
    let Some(node) = graph.node(id) else { return 0.0 };
    let Some(cell) = grid.cell_for_node(id) else { return 0.0 };
    grid.neighborhood(&cell)
        .into_iter()
        .filter(|n| *n != id)
        .filter_map(|n| graph.node(n))
        .map(|n| (n.pose.x() - node.pose.x()).powi(2) + (n.pose.y() - node.pose.y()).powi(2))
        .sum()
}

fn information_weight(graph: &PoseGraph, id: NodeId, mode: WeightMode) -> f64 {
    match mode {
        WeightMode::NodeInfo => graph
            .node(id)
            .map(|n| clamped_inverse(n.cov.matrix(), crate::graph::EPS_SINGULAR, W_MAX).trace())
            .unwrap_or(0.0),
        WeightMode::EdgeInfo => graph
            .incident_edges(id)
            .iter()
            .filter_map(|e| graph.edge(*e))
            .map(|e| e.information.trace())
            .sum(),
    }
}

/// Blend of the information term and the geometric term, `s` on the former.
pub fn node_weight(graph: &PoseGraph, grid: &GridIndex, id: NodeId, s: f64, mode: WeightMode) -> f64 {
    let info = if s != 0.0 {
        information_weight(graph, id, mode)
    } else {
        0.0
    };
    let geo = if s != 1.0 {
        geometric_weight(graph, grid, id)
    } else {
        0.0
    };
    s * info + (1.0 - s) * geo
}

/// Re-propagates node covariances along the odometry chain in ascending id
/// order. A node's predecessor is the other end of its most informative
/// odometry edge toward a live lower id; nodes without one keep their
/// covariance.
pub fn propagate_chain_covariances(graph: &mut PoseGraph) {
    let ids = graph.node_ids();
    let mut updated: BTreeMap<NodeId, Covariance3> = BTreeMap::new();
    for id in ids {
        let pred = graph
            .incident_edges(id)
            .iter()
            .filter_map(|e| graph.edge(*e).map(|edge| (*e, edge)))
            .filter(|(_, e)| e.kind == EdgeKind::Odometry && e.other(id) < id)
            .max_by(|a, b| {
                a.1.mutual_information()
                    .total_cmp(&b.1.mutual_information())
                    .then(b.0.cmp(&a.0))
            })
            .map(|(_, e)| e.clone());
        let Some(edge) = pred else { continue };
        let p = edge.other(id);
        let Some(pnode) = graph.node(p) else { continue };
        let base_cov = updated.get(&p).copied().unwrap_or(pnode.cov);
        let (rel, rel_cov) = oriented(&edge.measurement, &edge.covariance(), edge.from == p);
        let cov = compound_covariance(&pnode.pose, &base_cov, &rel, &rel_cov);
        updated.insert(id, cov);
    }
    for (id, cov) in updated {
        if let Some(n) = graph.node_mut(id) {
            n.cov = cov;
        }
    }
}

/// Measurement and parameter covariance of an edge transform, inverted when
/// the traversal runs against the stored direction. `cov` is the edge's
/// perturbation covariance.
pub(crate) fn oriented(meas: &Transform2D, cov: &Covariance3, forward: bool) -> (Transform2D, Covariance3) {
    let param = perturbation_to_parameter(meas, cov);
    if forward {
        (*meas, param)
    } else {
        (meas.inverse(), inverse_covariance(meas, &param))
    }
}

fn components_from(edge: &Edge, start: NodeId) -> Vec<(f64, Transform2D, Covariance3)> {
    let forward = edge.from == start;
    let raw: Vec<(f64, Transform2D, Matrix3<f64>)> = match &edge.kernel {
        Kernel::MaxMixture(c) => c.iter().map(|c| (c.weight, c.measurement, c.information)).collect(),
        _ => vec![(1.0, edge.measurement, edge.information)],
    };
    raw.into_iter()
        .map(|(w, m, info)| {
            let cov = Covariance3::from_matrix_unchecked(clamped_inverse(&info, 0.0, W_MAX));
            let (m, c) = oriented(&m, &cov, forward);
            (w, m, c)
        })
        .collect()
}

fn composed_kind(a: EdgeKind, b: EdgeKind) -> EdgeKind {
    use EdgeKind::*;
    match (a, b) {
        (ZeroConstraint, ZeroConstraint) => ZeroConstraint,
        (Odometry, Odometry) | (Odometry, ZeroConstraint) | (ZeroConstraint, Odometry) => Odometry,
        _ => Derived,
    }
}

/// Edge from `a` to `b` equivalent to traversing `ea` (between `a` and `v`)
/// then `eb` (between `v` and `b`).
pub fn compose_through(a: NodeId, ea: &Edge, v: NodeId, eb: &Edge, b: NodeId) -> Edge {
    let first = components_from(ea, a);
    let second = components_from(eb, v);
    let mut parts = Vec::with_capacity(first.len() * second.len());
    for (wa, ma, ca) in &first {
        for (wb, mb, cb) in &second {
            let measurement = compose(ma, mb);
            let cov = parameter_to_perturbation(&measurement, &compound_covariance(ma, ca, mb, cb));
            parts.push(MixtureComponent {
                weight: wa * wb,
                information: information_from_covariance(&cov),
                measurement,
            });
        }
    }
    let kind = composed_kind(ea.kind, eb.kind);
    let mixture = matches!(ea.kernel, Kernel::MaxMixture(_)) || matches!(eb.kernel, Kernel::MaxMixture(_));
    if mixture {
        return Edge::max_mixture(a, b, kind, parts);
    }
    let c = parts.pop().expect("one component");
    let kernel = match (&ea.kernel, &eb.kernel) {
        (Kernel::Huber(d), _) | (_, Kernel::Huber(d)) => Kernel::Huber(*d),
        _ => Kernel::None,
    };
    let measurement = if kind == EdgeKind::ZeroConstraint {
        Transform2D::identity()
    } else {
        c.measurement
    };
    Edge::new(a, b, kind, measurement, c.information).with_kernel(kernel)
}

/// Most informative edge joining `v` to each of its neighbors; ties go to
/// the smaller edge id.
fn strongest_links(graph: &PoseGraph, v: NodeId) -> BTreeMap<NodeId, EdgeId> {
    let mut best: BTreeMap<NodeId, (EdgeId, f64)> = BTreeMap::new();
    for &eid in graph.incident_edges(v) {
        let Some(e) = graph.edge(eid) else { continue };
        let mi = e.mutual_information();
        let slot = best.entry(e.other(v)).or_insert((eid, mi));
        if mi > slot.1 || (mi == slot.1 && eid < slot.0) {
            *slot = (eid, mi);
        }
    }
    best.into_iter().map(|(n, (e, _))| (n, e)).collect()
}

/// Bridges `v` out of the graph and prunes it. Returns (added, removed).
fn eliminate(graph: &mut PoseGraph, v: NodeId) -> (usize, usize) {
    let links = strongest_links(graph, v);
    let neighbors: Vec<NodeId> = links.keys().copied().collect();
    let mut bridges = Vec::new();
    for (i, &a) in neighbors.iter().enumerate() {
        for &b in &neighbors[i + 1..] {
            let ea = graph.edge(links[&a]).expect("linked edge");
            let eb = graph.edge(links[&b]).expect("linked edge");
            bridges.push(compose_through(a, ea, v, eb, b));
        }
    }
    let mut removed = graph.prune_node(v).map(|r| r.len()).unwrap_or(0);
    let added = bridges.len();
    for e in bridges {
        graph.add_edge(e).expect("bridge endpoints are live");
    }
    // the bridges form a clique; thin it right away so fill-in stays local
    if neighbors.len() > 2 {
        removed += chow_liu_sparsify_among(graph, &neighbors.iter().copied().collect());
    }
    (added, removed)
}

/// Keeps one node per occupied cell and bridges the rest out of the graph.
pub fn prune_cells(graph: &mut PoseGraph, grid: &mut GridIndex, s: f64, mode: WeightMode) -> PruneReport {
    let start = Instant::now();
    let nodes_before = graph.node_count();
    let edges_before = graph.edge_count();
    *grid = GridIndex::build(graph, grid.cell_size());

    let crowded: Vec<Vec<NodeId>> = grid
        .cells()
        .filter(|(_, m)| m.len() > 1)
        .map(|(_, m)| m.clone())
        .collect();
    if mode == WeightMode::NodeInfo && !crowded.is_empty() {
        match marginal_covariances(graph, None) {
            Ok(m) => {
                for (id, cov) in m {
                    if let Some(n) = graph.node_mut(id) {
                        n.cov = cov;
                    }
                }
            }
            Err(e) => log::warn!("marginal recovery failed ({e}); weighting with stored covariances"),
        }
    }

    let mut doomed = BTreeSet::new();
    for members in &crowded {
        let mut keep = members[0];
        let mut keep_w = f64::NEG_INFINITY;
        for &id in members {
            let w = node_weight(graph, grid, id, s, mode);
            // members are ascending, so strict comparison keeps the smallest id on ties
            if w > keep_w {
                keep = id;
                keep_w = w;
            }
        }
        doomed.extend(members.iter().copied().filter(|id| *id != keep));
    }

    let mut edges_added = 0;
    let mut max_net_growth = 0i64;
    for &v in &doomed {
        let (added, removed) = eliminate(graph, v);
        edges_added += added;
        max_net_growth = max_net_growth.max(added as i64 - removed as i64);
        grid.remove(v);
    }
    if !doomed.is_empty() {
        propagate_chain_covariances(graph);
    }

    PruneReport {
        nodes_before,
        nodes_after: graph.node_count(),
        edges_before,
        edges_after: graph.edge_count(),
        eliminated: doomed.into_iter().collect(),
        npc: grid.npc(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        edges_added,
        max_net_growth,
    }
}

//! Edge reduction by maximum mutual-information spanning forests.

use std::collections::{BTreeMap, BTreeSet};

use super::union_find::UnionFind;
use crate::graph::{Edge, EdgeId, NodeId, PoseGraph};

/// Removable edges (everything except the odometry chain) with their
/// mutual information, ordered by decreasing information then id.
pub fn removable_edges_by_information(graph: &PoseGraph) -> Vec<(EdgeId, f64)> {
    rank(graph.edges())
}

fn rank<'a>(edges: impl Iterator<Item = (EdgeId, &'a Edge)>) -> Vec<(EdgeId, f64)> {
    let mut ranked: Vec<(EdgeId, f64)> = edges
        .filter(|(_, e)| e.kind.is_removable())
        .map(|(id, e)| (id, e.mutual_information()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Kruskal over `ranked`: returns the edges that would close a cycle.
fn kruskal_rejects(graph: &PoseGraph, ranked: Vec<(EdgeId, f64)>) -> Vec<EdgeId> {
    let mut index: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (id, _) in &ranked {
        let e = graph.edge(*id).expect("ranked edge exists");
        for n in [e.from, e.to] {
            let next = index.len();
            index.entry(n).or_insert(next);
        }
    }
    let mut uf = UnionFind::new(index.len());
    let mut rejected = Vec::new();
    for (id, _) in ranked {
        let e = graph.edge(id).expect("ranked edge exists");
        if !uf.union(index[&e.from], index[&e.to]) {
            rejected.push(id);
        }
    }
    rejected
}

/// Kruskal over the removable edges: keeps the maximum-information
/// spanning forest of their subgraph and drops every edge that would close
/// a cycle. Returns the number of removed edges.
pub fn chow_liu_sparsify(graph: &mut PoseGraph) -> usize {
    let rejected = kruskal_rejects(graph, removable_edges_by_information(graph));
    for id in &rejected {
        graph.remove_edge(*id);
    }
    rejected.len()
}

/// Same reduction restricted to removable edges with both endpoints in
/// `nodes`.
pub fn chow_liu_sparsify_among(graph: &mut PoseGraph, nodes: &BTreeSet<NodeId>) -> usize {
    let mut inside: BTreeSet<EdgeId> = BTreeSet::new();
    for n in nodes {
        for &eid in graph.incident_edges(*n) {
            if graph.edge(eid).is_some_and(|e| nodes.contains(&e.other(*n))) {
                inside.insert(eid);
            }
        }
    }
    let ranked = rank(inside.iter().filter_map(|id| graph.edge(*id).map(|e| (*id, e))));
    let rejected = kruskal_rejects(graph, ranked);
    for id in &rejected {
        graph.remove_edge(*id);
    }
    rejected.len()
}

//! Pose-graph data model.
//!
//! A [`PoseGraph`] is a multigraph of frame nodes joined by relative-pose
//! edges. Nodes are never physically removed; pruning flips their status so
//! ids stay monotonic and historical poses remain available for metrics.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    clamped_inverse, inverse_covariance, parameter_to_perturbation, perturbation_to_parameter, symmetrize, Covariance3,
    Pose2D, Transform2D,
};

pub type NodeId = u64;
pub type EdgeId = u64;

/// Eigenvalue threshold below which a covariance is treated as having no
/// usable inverse.
pub const EPS_SINGULAR: f64 = 1e-9;
/// Upper bound on any information value; keeps zero-constraints finite.
pub const W_MAX: f64 = 1e12;
/// Covariance assigned to a zero-constraint before inversion.
pub const ZERO_CONSTRAINT_VARIANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSource {
    WheelImu,
    Visual,
    Lidar,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Unregistered,
    Optimized,
    Temporal,
    Pruned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameNode {
    pub id: NodeId,
    pub pose: Pose2D,
    pub cov: Covariance3,
    pub source: NodeSource,
    pub status: NodeStatus,
}

impl FrameNode {
    pub fn is_live(&self) -> bool {
        self.status != NodeStatus::Pruned
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Odometry,
    LoopVisual,
    LoopLidar,
    ZeroConstraint,
    /// Produced by composing two edges through an eliminated node.
    Derived,
}

impl EdgeKind {
    /// Odometry-chain edges carry the trajectory and are never sparsified.
    pub fn is_removable(self) -> bool {
        self != EdgeKind::Odometry
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub information: Matrix3<f64>,
    pub measurement: Transform2D,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum Kernel {
    #[default]
    None,
    Huber(f64),
    MaxMixture(Vec<MixtureComponent>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
    /// Pose of `to` expressed in the frame of `from`.
    pub measurement: Transform2D,
    pub information: Matrix3<f64>,
    pub kernel: Kernel,
}

impl Edge {
    pub fn new(from: NodeId, to: NodeId, kind: EdgeKind, measurement: Transform2D, information: Matrix3<f64>) -> Self {
        Self {
            from,
            to,
            kind,
            measurement,
            information: symmetrize(&information),
            kernel: Kernel::None,
        }
    }

    pub fn odometry(from: NodeId, to: NodeId, measurement: Transform2D, information: Matrix3<f64>) -> Self {
        Self::new(from, to, EdgeKind::Odometry, measurement, information)
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    /// Max-mixture edge whose nominal measurement is the first component.
    pub fn max_mixture(from: NodeId, to: NodeId, kind: EdgeKind, components: Vec<MixtureComponent>) -> Self {
        let first = components
            .first()
            .cloned()
            .expect("max-mixture edge needs at least one component");
        Self::new(from, to, kind, first.measurement, first.information).with_kernel(Kernel::MaxMixture(components))
    }

    /// Covariance implied by the information matrix.
    pub fn covariance(&self) -> Covariance3 {
        Covariance3::from_matrix_unchecked(clamped_inverse(&self.information, 0.0, W_MAX))
    }

    pub fn other(&self, id: NodeId) -> NodeId {
        if self.from == id {
            self.to
        } else {
            self.from
        }
    }

    /// Measurement oriented to start at `id`: the pose of the other endpoint
    /// in the frame of `id`.
    pub fn measurement_from(&self, id: NodeId) -> Transform2D {
        if self.from == id {
            self.measurement
        } else {
            self.measurement.inverse()
        }
    }

    /// Information for [`Edge::measurement_from`]`(id)`, expressed for a
    /// right perturbation of the oriented measurement.
    pub fn information_from(&self, id: NodeId) -> Matrix3<f64> {
        if self.from == id {
            return self.information;
        }
        let param = perturbation_to_parameter(&self.measurement, &self.covariance());
        let flipped = inverse_covariance(&self.measurement, &param);
        information_from_covariance(&parameter_to_perturbation(&self.measurement.inverse(), &flipped))
    }

    pub fn mutual_information(&self) -> f64 {
        information_mutual_information(&self.information)
    }
}

/// Mutual-information heuristic on a covariance: `‖Σ⁻¹‖_F` while Σ is
/// invertible, `|1/det Σ|` once it degenerates, both capped at [`W_MAX`].
pub fn mutual_information(cov: &Covariance3) -> f64 {
    let eig = SymmetricEigen::new(*cov.matrix());
    if eig.eigenvalues.min() > EPS_SINGULAR {
        let d = eig.eigenvalues.map(|l| 1.0 / l);
        // Frobenius norm of a symmetric matrix is the l2 norm of its spectrum
        d.norm().min(W_MAX)
    } else {
        let det = eig.eigenvalues.iter().product::<f64>().abs();
        if det > 0.0 {
            (1.0 / det).min(W_MAX)
        } else {
            W_MAX
        }
    }
}

/// Same heuristic evaluated from an information matrix `Ω = Σ⁻¹`.
pub fn information_mutual_information(info: &Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(info));
    let max = eig.eigenvalues.max();
    if max < 1.0 / EPS_SINGULAR {
        eig.eigenvalues.norm().min(W_MAX)
    } else {
        eig.eigenvalues.iter().product::<f64>().abs().min(W_MAX)
    }
}

/// Information matrix from a covariance under the same clamping policy.
pub fn information_from_covariance(cov: &Covariance3) -> Matrix3<f64> {
    clamped_inverse(cov.matrix(), EPS_SINGULAR, W_MAX)
}

#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    nodes: BTreeMap<NodeId, FrameNode>,
    edges: BTreeMap<EdgeId, Edge>,
    adjacency: BTreeMap<NodeId, Vec<EdgeId>>,
    next_node: NodeId,
    next_edge: EdgeId,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, pose: Pose2D, cov: Covariance3, source: NodeSource) -> NodeId {
        let id = self.next_node;
        self.insert_node(id, pose, cov, source);
        id
    }

    /// Inserts a node under an externally chosen id (dataset ingestion).
    pub fn add_node_with_id(
        &mut self,
        id: NodeId,
        pose: Pose2D,
        cov: Covariance3,
        source: NodeSource,
    ) -> Result<NodeId> {
        if self.nodes.contains_key(&id) {
            return Err(Error::InvalidConfig(format!("duplicate node id {id}")));
        }
        self.insert_node(id, pose, cov, source);
        Ok(id)
    }

    fn insert_node(&mut self, id: NodeId, pose: Pose2D, cov: Covariance3, source: NodeSource) {
        self.nodes.insert(
            id,
            FrameNode {
                id,
                pose,
                cov,
                source,
                status: NodeStatus::Unregistered,
            },
        );
        self.adjacency.entry(id).or_default();
        self.next_node = self.next_node.max(id + 1);
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<EdgeId> {
        for id in [edge.from, edge.to] {
            match self.nodes.get(&id) {
                None => return Err(Error::UnknownNode(id)),
                Some(n) if !n.is_live() => return Err(Error::PrunedNode(id)),
                Some(_) => {}
            }
        }
        if edge.from == edge.to {
            return Err(Error::SelfLoop(edge.from));
        }
        let id = self.next_edge;
        self.next_edge += 1;
        self.adjacency.entry(edge.from).or_default().push(id);
        self.adjacency.entry(edge.to).or_default().push(id);
        self.edges.insert(id, edge);
        Ok(id)
    }

    /// Identity-measurement edge between nodes captured at the same instant
    /// by synchronized sensors.
    pub fn add_zero_constraint(&mut self, a: NodeId, b: NodeId) -> Result<EdgeId> {
        let cov = Covariance3::from_diagonal(
            ZERO_CONSTRAINT_VARIANCE,
            ZERO_CONSTRAINT_VARIANCE,
            ZERO_CONSTRAINT_VARIANCE,
        );
        // the near-zero covariance falls in the degenerate branch: w_max on every axis
        debug_assert_eq!(mutual_information(&cov), W_MAX);
        let info = Matrix3::identity() * W_MAX;
        self.add_edge(Edge::new(a, b, EdgeKind::ZeroConstraint, Pose2D::identity(), info))
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Option<Edge> {
        let edge = self.edges.remove(&id)?;
        for n in [edge.from, edge.to] {
            if let Some(list) = self.adjacency.get_mut(&n) {
                list.retain(|e| *e != id);
            }
        }
        Some(edge)
    }

    /// Marks a node pruned and drops its incident edges, which are returned.
    pub fn prune_node(&mut self, id: NodeId) -> Result<Vec<(EdgeId, Edge)>> {
        if !self.nodes.contains_key(&id) {
            return Err(Error::UnknownNode(id));
        }
        let incident = self.adjacency.get(&id).cloned().unwrap_or_default();
        let removed = incident
            .into_iter()
            .filter_map(|e| self.remove_edge(e).map(|edge| (e, edge)))
            .collect();
        if let Some(n) = self.nodes.get_mut(&id) {
            n.status = NodeStatus::Pruned;
        }
        Ok(removed)
    }

    pub fn node(&self, id: NodeId) -> Option<&FrameNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut FrameNode> {
        self.nodes.get_mut(&id)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> Option<&mut Edge> {
        self.edges.get_mut(&id)
    }

    /// All nodes, pruned included, in ascending id order.
    pub fn all_nodes(&self) -> impl Iterator<Item = &FrameNode> {
        self.nodes.values()
    }

    /// Non-pruned nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &FrameNode> {
        self.nodes.values().filter(|n| n.is_live())
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes().map(|n| n.id).collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().map(|(k, v)| (*k, v))
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn incident_edges(&self, id: NodeId) -> &[EdgeId] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.incident_edges(id).len()
    }

    /// Distinct neighbors of `id`, ascending.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self
            .incident_edges(id)
            .iter()
            .filter_map(|e| self.edges.get(e))
            .map(|e| e.other(id))
            .collect();
        set.into_iter().collect()
    }

    pub fn set_pose(&mut self, id: NodeId, pose: Pose2D) -> Result<()> {
        self.nodes
            .get_mut(&id)
            .map(|n| n.pose = pose)
            .ok_or(Error::UnknownNode(id))
    }

    pub fn set_status(&mut self, id: NodeId, status: NodeStatus) -> Result<()> {
        self.nodes
            .get_mut(&id)
            .map(|n| n.status = status)
            .ok_or(Error::UnknownNode(id))
    }

    /// Live poses keyed by id.
    pub fn poses(&self) -> BTreeMap<NodeId, Pose2D> {
        self.nodes().map(|n| (n.id, n.pose)).collect()
    }

    /// Immutable copy that can be handed to another thread.
    pub fn snapshot(&self) -> Arc<PoseGraph> {
        Arc::new(self.clone())
    }

    /// Live nodes whose position lies in the axis-aligned square of side
    /// `side` centered on `center`, ascending id.
    pub fn submap_nodes(&self, center: &Pose2D, side: f64) -> Vec<NodeId> {
        let half = side * 0.5;
        self.nodes()
            .filter(|n| (n.pose.x() - center.x()).abs() <= half && (n.pose.y() - center.y()).abs() <= half)
            .map(|n| n.id)
            .collect()
    }

    /// Adjacency rebuilt from the edge set, for consistency checks.
    pub fn recompute_adjacency(&self) -> BTreeMap<NodeId, Vec<EdgeId>> {
        let mut adj: BTreeMap<NodeId, Vec<EdgeId>> = self.nodes.keys().map(|k| (*k, Vec::new())).collect();
        for (id, e) in &self.edges {
            adj.entry(e.from).or_default().push(*id);
            adj.entry(e.to).or_default().push(*id);
        }
        adj
    }

    /// Checks adjacency, degree-sum and pruned-node invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut fresh = self.recompute_adjacency();
        let mut incremental = self.adjacency.clone();
        for v in fresh.values_mut().chain(incremental.values_mut()) {
            v.sort_unstable();
        }
        incremental.retain(|k, _| self.nodes.contains_key(k));
        if fresh != incremental {
            return Err("adjacency out of sync with edges".into());
        }
        let degree_sum: usize = self.adjacency.values().map(Vec::len).sum();
        if degree_sum != 2 * self.edges.len() {
            return Err(format!("degree sum {degree_sum} != 2|E| {}", 2 * self.edges.len()));
        }
        for (id, e) in &self.edges {
            for n in [e.from, e.to] {
                match self.nodes.get(&n) {
                    Some(node) if node.is_live() => {}
                    _ => return Err(format!("edge {id} references dead node {n}")),
                }
            }
            if e.kind == EdgeKind::ZeroConstraint && e.measurement != Pose2D::identity() {
                return Err(format!("zero-constraint edge {id} has non-identity measurement"));
            }
        }
        Ok(())
    }

    /// Connected components over live nodes, each sorted ascending; the
    /// list is ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for start in self.nodes().map(|n| n.id) {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if seen.insert(v) {
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Nodes reachable from `root` through live edges.
    pub fn reachable_from(&self, root: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

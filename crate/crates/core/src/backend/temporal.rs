use crate::error::{Error, Result};
use crate::geometry::{compose, compound_covariance, Covariance3, Transform2D};
use crate::graph::{NodeId, NodeStatus, PoseGraph};

/// Turns the oldest unregistered node of the window into a temporal node.
///
/// The base is the newest optimized node preceding the window. The temporal
/// mean is `base ⊕ delta`; its covariance is the base covariance carried
/// through the composition plus the relative covariance `delta_cov`, both
/// rotated by the compounding Jacobians.
pub fn make_temporal_node(
    graph: &mut PoseGraph,
    window: usize,
    delta: &Transform2D,
    delta_cov: &Covariance3,
) -> Result<NodeId> {
    let unregistered: Vec<NodeId> = graph
        .nodes()
        .filter(|n| n.status == NodeStatus::Unregistered)
        .map(|n| n.id)
        .collect();
    if window == 0 || unregistered.len() < window {
        return Err(Error::InsufficientWindow {
            have: unregistered.len(),
            need: window.max(1),
        });
    }
    let first = unregistered[0];
    let base = graph
        .nodes()
        .filter(|n| n.id < first && n.status == NodeStatus::Optimized)
        .last()
        .ok_or(Error::NoBaseNode)?;
    let pose = compose(&base.pose, delta);
    let cov = compound_covariance(&base.pose, &base.cov, delta, delta_cov);
    let node = graph.node_mut(first).ok_or(Error::UnknownNode(first))?;
    node.pose = pose;
    node.cov = cov;
    node.status = NodeStatus::Temporal;
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::graph::NodeSource;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn window_graph(base: Pose2D, base_cov: Covariance3, unregistered: usize) -> PoseGraph {
        let mut g = PoseGraph::new();
        let b = g.add_node(base, base_cov, NodeSource::Synthetic);
        g.set_status(b, NodeStatus::Optimized).unwrap();
        for i in 0..unregistered {
            g.add_node(
                Pose2D::new(9.0 + i as f64, 9.0, 0.0),
                Covariance3::identity(),
                NodeSource::Synthetic,
            );
        }
        g
    }

    #[test]
    fn identity_delta_copies_base() {
        let base = Pose2D::new(1.0, -2.0, 0.4);
        let mut g = window_graph(base, Covariance3::zero(), 5);
        let id = make_temporal_node(&mut g, 5, &Pose2D::identity(), &Covariance3::zero()).unwrap();
        assert_eq!(id, 1);
        let n = g.node(id).unwrap();
        assert_eq!(n.pose, base);
        assert_eq!(*n.cov.matrix(), Matrix3::zeros());
        assert_eq!(n.status, NodeStatus::Temporal);
    }

    #[test]
    fn single_relative_term() {
        let mut g = window_graph(Pose2D::identity(), Covariance3::zero(), 3);
        let id = make_temporal_node(&mut g, 3, &Pose2D::new(1.0, 0.0, 0.0), &Covariance3::identity()).unwrap();
        let n = g.node(id).unwrap();
        assert_relative_eq!(n.pose.x(), 1.0);
        assert_relative_eq!(*n.cov.matrix(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn covariance_trace_grows() {
        let base_cov = Covariance3::new(Matrix3::new(0.3, 0.05, 0.0, 0.05, 0.2, 0.01, 0.0, 0.01, 0.1)).unwrap();
        let mut g = window_graph(Pose2D::new(0.0, 0.0, 1.0), base_cov, 2);
        let rel = Covariance3::from_diagonal(0.01, 0.02, 0.003);
        let id = make_temporal_node(&mut g, 2, &Pose2D::new(0.5, 0.1, 0.2), &rel).unwrap();
        assert!(g.node(id).unwrap().cov.trace() >= base_cov.trace());
    }

    #[test]
    fn short_window_is_rejected() {
        let mut g = window_graph(Pose2D::identity(), Covariance3::zero(), 2);
        let err = make_temporal_node(&mut g, 5, &Pose2D::identity(), &Covariance3::zero()).unwrap_err();
        assert!(matches!(err, Error::InsufficientWindow { have: 2, need: 5 }));
    }

    #[test]
    fn missing_base_is_rejected() {
        let mut g = PoseGraph::new();
        for _ in 0..3 {
            g.add_node(Pose2D::identity(), Covariance3::zero(), NodeSource::Synthetic);
        }
        let err = make_temporal_node(&mut g, 3, &Pose2D::identity(), &Covariance3::zero()).unwrap_err();
        assert!(matches!(err, Error::NoBaseNode));
    }
}

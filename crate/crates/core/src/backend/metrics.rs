use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::graph::{NodeId, PoseGraph};

/// Positions closer to the origin than this are left out of ARPS.
pub const ARPS_MIN_NORM: f64 = 1e-6;

/// Average ratio of pose shift in percent, over the nodes present in both
/// maps: mean of `|t_ori - t_pru| / |t_ori|` times 100.
pub fn metric_arps(original: &BTreeMap<NodeId, Pose2D>, pruned: &BTreeMap<NodeId, Pose2D>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (id, p) in pruned {
        let Some(o) = original.get(id) else { continue };
        let norm = o.translation_norm();
        if norm < ARPS_MIN_NORM {
            continue;
        }
        sum += (o.x() - p.x()).hypot(o.y() - p.y()) / norm;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoComparableNodes);
    }
    Ok(sum / count as f64 * 100.0)
}

/// Root-mean-square translational error between matched trajectories.
pub fn metric_t_rel(estimate: &[Pose2D], truth: &[Pose2D]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch(estimate.len(), truth.len()));
    }
    if estimate.is_empty() {
        return Err(Error::EmptyTrajectory("t_rel needs at least one pose".into()));
    }
    let sq: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.x() - t.x()).powi(2) + (e.y() - t.y()).powi(2))
        .sum();
    Ok((sq / estimate.len() as f64).sqrt())
}

/// Nearest-rank percentile of live-node degrees; `p` in `[0, 100]`.
pub fn degree_percentile(graph: &PoseGraph, p: f64) -> usize {
    let mut d: Vec<usize> = graph.nodes().map(|n| graph.degree(n.id)).collect();
    if d.is_empty() {
        return 0;
    }
    d.sort_unstable();
    let rank = ((p / 100.0) * d.len() as f64).ceil() as usize;
    d[rank.clamp(1, d.len()) - 1]
}

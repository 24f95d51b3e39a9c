//! Robust pose-graph optimization.
//!
//! Odometry and zero-constraint edges enter the cost as plain squared
//! Mahalanobis residuals. Loop and derived edges go through a Huber kernel on
//! the whitened residual norm. Max-mixture edges pick, at every
//! linearization and every cost evaluation, the component of highest
//! likelihood. Steps are damped Levenberg-style and only accepted when the
//! robust cost does not increase.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{inverse_compose, wrap_angle, Pose2D, Transform2D};
use crate::graph::{Edge, EdgeKind, Kernel, NodeId, NodeStatus, PoseGraph};
use crate::linalg::BlockSystem;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Relative cost-change threshold for termination.
    pub tol: f64,
    /// Huber threshold on the whitened residual of loop edges.
    pub huber_delta: f64,
    /// Fixed node; defaults to the smallest live id.
    pub gauge: Option<NodeId>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
            huber_delta: 1.0,
            gauge: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOutcome {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
}

/// SE(2) edge error `z⁻¹ ⊕ (xi⁻¹ ⊕ xj)` as a vector, with its Jacobians
/// with respect to `xi` and `xj`.
pub fn edge_error(xi: &Pose2D, xj: &Pose2D, z: &Transform2D) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let (si, ci) = xi.theta().sin_cos();
    let (sz, cz) = z.theta().sin_cos();
    let ri_t = Matrix2::new(ci, si, -si, ci);
    let dri_t = Matrix2::new(-si, ci, -ci, -si);
    let rz_t = Matrix2::new(cz, sz, -sz, cz);
    let dt = Vector2::new(xj.x() - xi.x(), xj.y() - xi.y());
    let local = ri_t * dt - Vector2::new(z.x(), z.y());
    let et = rz_t * local;
    let e = Vector3::new(et[0], et[1], wrap_angle(xj.theta() - xi.theta() - z.theta()));

    let rr = rz_t * ri_t;
    let dtheta = rz_t * dri_t * dt;
    #[rustfmt::skip]
    let a = Matrix3::new(
        -rr[(0, 0)], -rr[(0, 1)], dtheta[0],
        -rr[(1, 0)], -rr[(1, 1)], dtheta[1],
        0.0, 0.0, -1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3::new(
        rr[(0, 0)], rr[(0, 1)], 0.0,
        rr[(1, 0)], rr[(1, 1)], 0.0,
        0.0, 0.0, 1.0,
    );
    (e, a, b)
}

/// Residual only; cheaper than [`edge_error`].
pub fn edge_residual(xi: &Pose2D, xj: &Pose2D, z: &Transform2D) -> Vector3<f64> {
    inverse_compose(z, &inverse_compose(xi, xj)).to_vector()
}

fn chi2(e: &Vector3<f64>, info: &Matrix3<f64>) -> f64 {
    (e.transpose() * info * e)[0].max(0.0)
}

/// Robust cost `ρ(s)` on a squared whitened norm `s`.
pub fn huber_cost(s: f64, delta: f64) -> f64 {
    let r = s.sqrt();
    if r <= delta {
        s
    } else {
        2.0 * delta * r - delta * delta
    }
}

fn huber_weight(s: f64, delta: f64) -> f64 {
    let r = s.sqrt();
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

/// Kernel actually applied to an edge given the optimizer configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Robust {
    Plain,
    Huber(f64),
    Mixture,
}

fn robust_for(edge: &Edge, config: &OptimizerConfig) -> Robust {
    match &edge.kernel {
        Kernel::MaxMixture(_) => Robust::Mixture,
        Kernel::Huber(d) => Robust::Huber(*d),
        Kernel::None => match edge.kind {
            EdgeKind::Odometry | EdgeKind::ZeroConstraint => Robust::Plain,
            EdgeKind::LoopVisual | EdgeKind::LoopLidar | EdgeKind::Derived => Robust::Huber(config.huber_delta),
        },
    }
}

/// Negative log-normalizer of a component, `-2 ln w - ln det Ω`.
fn component_offset(weight: f64, info: &Matrix3<f64>) -> f64 {
    let det = info.determinant();
    if weight <= 0.0 || det <= 0.0 {
        f64::INFINITY
    } else {
        -2.0 * weight.ln() - det.ln()
    }
}

/// Index of the most likely mixture component at the given poses and its
/// cost relative to the best-normalized component. Ties go to the first.
pub fn select_component(edge: &Edge, xi: &Pose2D, xj: &Pose2D) -> (usize, f64) {
    let Kernel::MaxMixture(components) = &edge.kernel else {
        let e = edge_residual(xi, xj, &edge.measurement);
        return (0, chi2(&e, &edge.information));
    };
    let offsets: Vec<f64> = components
        .iter()
        .map(|c| component_offset(c.weight, &c.information))
        .collect();
    let all_degenerate = offsets.iter().all(|o| !o.is_finite());
    let base = if all_degenerate {
        0.0
    } else {
        offsets.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let mut best = (0, f64::INFINITY);
    for (k, c) in components.iter().enumerate() {
        let e = edge_residual(xi, xj, &c.measurement);
        let off = if all_degenerate { 0.0 } else { offsets[k] - base };
        let score = chi2(&e, &c.information) + off;
        if score < best.1 {
            best = (k, score);
        }
    }
    best
}

/// Cost contribution of one edge.
fn edge_cost(edge: &Edge, xi: &Pose2D, xj: &Pose2D, config: &OptimizerConfig) -> f64 {
    match robust_for(edge, config) {
        Robust::Plain => chi2(&edge_residual(xi, xj, &edge.measurement), &edge.information),
        Robust::Huber(d) => huber_cost(chi2(&edge_residual(xi, xj, &edge.measurement), &edge.information), d),
        Robust::Mixture => select_component(edge, xi, xj).1,
    }
}

/// Total robust cost of the live graph at the given poses.
pub fn total_cost(graph: &PoseGraph, poses: &BTreeMap<NodeId, Pose2D>, config: &OptimizerConfig) -> f64 {
    graph
        .edges()
        .map(|(_, e)| edge_cost(e, &poses[&e.from], &poses[&e.to], config))
        .sum()
}

/// Total cost at the graph's current poses.
pub fn graph_cost(graph: &PoseGraph, config: &OptimizerConfig) -> f64 {
    total_cost(graph, &graph.poses(), config)
}

/// Chooses the gauge and verifies every live node is reachable from it.
pub(crate) fn resolve_gauge(graph: &PoseGraph, gauge: Option<NodeId>) -> Result<NodeId> {
    let gauge = match gauge {
        Some(g) => match graph.node(g) {
            Some(n) if n.is_live() => g,
            _ => return Err(Error::UnknownNode(g)),
        },
        None => graph.nodes().next().map(|n| n.id).ok_or(Error::Underconstrained)?,
    };
    let reachable = graph.reachable_from(gauge);
    let unreachable: Vec<NodeId> = graph
        .nodes()
        .map(|n| n.id)
        .filter(|id| !reachable.contains(id))
        .collect();
    if !unreachable.is_empty() {
        return Err(Error::DisconnectedGauge { gauge, unreachable });
    }
    Ok(gauge)
}

/// Column layout: every live node except the gauge owns one 3×3 block.
pub(crate) fn block_layout(graph: &PoseGraph, gauge: NodeId) -> BTreeMap<NodeId, usize> {
    graph
        .nodes()
        .map(|n| n.id)
        .filter(|id| *id != gauge)
        .enumerate()
        .map(|(k, id)| (id, k))
        .collect()
}

/// Assembles `JᵀWJ` and `-JᵀWe` at `poses`. With `robust == false` every
/// edge contributes its nominal information unweighted.
pub(crate) fn assemble(
    graph: &PoseGraph,
    poses: &BTreeMap<NodeId, Pose2D>,
    layout: &BTreeMap<NodeId, usize>,
    config: &OptimizerConfig,
    robust: bool,
) -> BlockSystem {
    let mut sys = BlockSystem::new(layout.len());
    for (_, edge) in graph.edges() {
        let xi = &poses[&edge.from];
        let xj = &poses[&edge.to];
        let (meas, info, weight) = if robust {
            match robust_for(edge, config) {
                Robust::Plain => (edge.measurement, edge.information, 1.0),
                Robust::Huber(d) => {
                    let s = chi2(&edge_residual(xi, xj, &edge.measurement), &edge.information);
                    (edge.measurement, edge.information, huber_weight(s, d))
                }
                Robust::Mixture => {
                    let (k, _) = select_component(edge, xi, xj);
                    let Kernel::MaxMixture(c) = &edge.kernel else {
                        unreachable!()
                    };
                    (c[k].measurement, c[k].information, 1.0)
                }
            }
        } else {
            (edge.measurement, edge.information, 1.0)
        };
        let (e, a, b) = edge_error(xi, xj, &meas);
        let w_info = info * weight;
        let bi = layout.get(&edge.from).copied();
        let bj = layout.get(&edge.to).copied();
        if let Some(i) = bi {
            sys.add_block(i, i, &(a.transpose() * w_info * a));
            sys.add_rhs(i, &(-(a.transpose() * w_info * e)));
        }
        if let Some(j) = bj {
            sys.add_block(j, j, &(b.transpose() * w_info * b));
            sys.add_rhs(j, &(-(b.transpose() * w_info * e)));
        }
        if let (Some(i), Some(j)) = (bi, bj) {
            sys.add_block(i, j, &(a.transpose() * w_info * b));
        }
    }
    sys
}

fn apply_step(
    poses: &BTreeMap<NodeId, Pose2D>,
    layout: &BTreeMap<NodeId, usize>,
    dx: &[f64],
) -> BTreeMap<NodeId, Pose2D> {
    let mut out = poses.clone();
    for (id, k) in layout {
        let p = &poses[id];
        out.insert(
            *id,
            Pose2D::new(p.x() + dx[3 * k], p.y() + dx[3 * k + 1], p.theta() + dx[3 * k + 2]),
        );
    }
    out
}

const LAMBDA_INIT: f64 = 1e-8;
const LAMBDA_MAX: f64 = 1e10;
const COST_FLOOR: f64 = 1e-24;

/// Minimizes the robust cost over all live poses with the gauge held fixed.
/// Live nodes end up with status `Optimized`.
pub fn optimize(graph: &mut PoseGraph, config: &OptimizerConfig) -> Result<OptimizeOutcome> {
    let gauge = resolve_gauge(graph, config.gauge)?;
    let layout = block_layout(graph, gauge);
    let mut poses = graph.poses();
    let initial_cost = total_cost(graph, &poses, config);
    let mut cost = initial_cost;
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = layout.is_empty() || cost <= COST_FLOOR;

    while !converged && iterations < config.max_iter {
        iterations += 1;
        let sys = assemble(graph, &poses, &layout, config, true);
        let diag = sys.diagonal();
        if diag.iter().any(|d| d.is_nan() || *d <= 0.0) {
            // a degree of freedom without any information
            return Err(Error::SingularSystem);
        }
        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let damping: Vec<f64> = diag.iter().map(|d| lambda * d).collect();
            let dx = match sys.solve(&damping) {
                Ok(dx) => dx,
                Err(_) if lambda < 1.0 => {
                    lambda *= 10.0;
                    continue;
                }
                Err(_) => return Err(Error::SingularSystem),
            };
            let candidate = apply_step(&poses, &layout, &dx);
            let new_cost = total_cost(graph, &candidate, config);
            if new_cost.is_finite() && new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(COST_FLOOR);
                let step = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                poses = candidate;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < config.tol || cost <= COST_FLOOR || step < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at any damping level
            converged = true;
        }
    }

    for (id, pose) in &poses {
        graph.set_pose(*id, *pose)?;
        graph.set_status(*id, NodeStatus::Optimized)?;
    }
    Ok(OptimizeOutcome {
        iterations,
        initial_cost,
        final_cost: cost,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose, Covariance3};
    use crate::graph::{MixtureComponent, NodeSource};
    use approx::assert_relative_eq;

    fn chain(n: usize, step: Transform2D) -> PoseGraph {
        let mut g = PoseGraph::new();
        let mut p = Pose2D::identity();
        for i in 0..n {
            g.add_node(p, Covariance3::identity(), NodeSource::Synthetic);
            if i > 0 {
                g.add_edge(Edge::odometry((i - 1) as u64, i as u64, step, Matrix3::identity()))
                    .unwrap();
            }
            p = compose(&p, &step);
        }
        g
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let xi = Pose2D::new(0.4, -1.2, 0.7);
        let xj = Pose2D::new(2.1, 0.3, -2.5);
        let z = Pose2D::new(1.0, 0.5, 0.2);
        let (e0, a, b) = edge_error(&xi, &xj, &z);
        assert_relative_eq!(e0, edge_residual(&xi, &xj, &z), epsilon = 1e-12);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let pi = Pose2D::from_vector(&(xi.to_vector() + d));
            let mi = Pose2D::from_vector(&(xi.to_vector() - d));
            let col = (edge_residual(&pi, &xj, &z) - edge_residual(&mi, &xj, &z)) / (2.0 * h);
            assert_relative_eq!(col, a.column(k).into_owned(), epsilon = 1e-7);
            let pj = Pose2D::from_vector(&(xj.to_vector() + d));
            let mj = Pose2D::from_vector(&(xj.to_vector() - d));
            let col = (edge_residual(&xi, &pj, &z) - edge_residual(&xi, &mj, &z)) / (2.0 * h);
            assert_relative_eq!(col, b.column(k).into_owned(), epsilon = 1e-7);
        }
    }

    #[test]
    fn zero_noise_chain_has_zero_cost() {
        let step = Pose2D::new(1.0, 0.2, 0.3);
        let mut g = chain(6, step);
        let truth = g.poses();
        let out = optimize(&mut g, &OptimizerConfig::default()).unwrap();
        assert!(out.final_cost < 1e-20);
        for (id, p) in g.poses() {
            assert_relative_eq!(p.to_vector(), truth[&id].to_vector(), epsilon = 1e-12);
            assert_eq!(g.node(id).unwrap().status, NodeStatus::Optimized);
        }
    }

    #[test]
    fn recovers_from_perturbed_start() {
        let step = Pose2D::new(1.0, 0.0, 0.5);
        let mut g = chain(8, step);
        let truth = g.poses();
        for id in 1..8u64 {
            let p = g.node(id).unwrap().pose;
            g.set_pose(id, Pose2D::new(p.x() + 0.3, p.y() - 0.2, p.theta() + 0.1))
                .unwrap();
        }
        let out = optimize(&mut g, &OptimizerConfig::default()).unwrap();
        assert!(out.final_cost <= out.initial_cost);
        for (id, p) in g.poses() {
            assert_relative_eq!(p.to_vector(), truth[&id].to_vector(), epsilon = 1e-6);
        }
    }

    #[test]
    fn disconnected_gauge_names_component() {
        let mut g = chain(3, Pose2D::new(1.0, 0.0, 0.0));
        g.add_node(Pose2D::identity(), Covariance3::identity(), NodeSource::Synthetic);
        let err = optimize(&mut g, &OptimizerConfig::default()).unwrap_err();
        match err {
            Error::DisconnectedGauge { gauge, unreachable } => {
                assert_eq!(gauge, 0);
                assert_eq!(unreachable, vec![3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rank_deficient_information_is_singular() {
        let mut g = PoseGraph::new();
        g.add_node(Pose2D::identity(), Covariance3::identity(), NodeSource::Synthetic);
        g.add_node(
            Pose2D::new(1.0, 0.0, 0.0),
            Covariance3::identity(),
            NodeSource::Synthetic,
        );
        let info = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        g.add_edge(Edge::odometry(0, 1, Pose2D::new(1.2, 0.0, 0.0), info))
            .unwrap();
        assert!(matches!(
            optimize(&mut g, &OptimizerConfig::default()),
            Err(Error::SingularSystem)
        ));
    }

    #[test]
    fn zero_constraint_pins_relative_pose() {
        // two "camera" nodes seen from the gauge with conflicting priors
        let mut g = PoseGraph::new();
        g.add_node(Pose2D::identity(), Covariance3::identity(), NodeSource::WheelImu);
        g.add_node(Pose2D::new(1.0, 0.0, 0.0), Covariance3::identity(), NodeSource::Visual);
        g.add_node(Pose2D::new(1.1, 0.1, 0.05), Covariance3::identity(), NodeSource::Visual);
        g.add_edge(Edge::odometry(0, 1, Pose2D::new(1.0, 0.0, 0.0), Matrix3::identity()))
            .unwrap();
        g.add_edge(Edge::odometry(0, 2, Pose2D::new(1.1, 0.1, 0.05), Matrix3::identity()))
            .unwrap();
        g.add_zero_constraint(1, 2).unwrap();
        optimize(&mut g, &OptimizerConfig::default()).unwrap();
        let rel = inverse_compose(&g.node(1).unwrap().pose, &g.node(2).unwrap().pose);
        assert!(rel.to_vector().abs().max() < 1e-6, "{rel}");
        // closed form: equal weights average the two priors
        let p = g.node(1).unwrap().pose;
        assert!((p.x() - 1.05).abs() < 1e-3 && (p.y() - 0.05).abs() < 1e-3);
    }

    #[test]
    fn mixture_selects_most_likely_component() {
        let mut g = chain(3, Pose2D::new(1.0, 0.0, 0.0));
        let good = MixtureComponent {
            weight: 0.5,
            information: Matrix3::identity(),
            measurement: Pose2D::new(2.0, 0.0, 0.0),
        };
        let bad = MixtureComponent {
            weight: 0.5,
            information: Matrix3::identity(),
            measurement: Pose2D::new(12.0, 0.0, 0.0),
        };
        g.add_edge(Edge::max_mixture(0, 2, EdgeKind::LoopLidar, vec![bad, good]))
            .unwrap();
        optimize(&mut g, &OptimizerConfig::default()).unwrap();
        let (_, edge) = g.edges().last().unwrap();
        let (k, _) = select_component(edge, &g.node(0).unwrap().pose, &g.node(2).unwrap().pose);
        assert_eq!(k, 1);
        assert_relative_eq!(g.node(2).unwrap().pose.x(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn huber_is_continuous_at_threshold() {
        let d = 1.3;
        assert_relative_eq!(huber_cost(d * d, d), d * d, epsilon = 1e-12);
        assert_relative_eq!(huber_cost(d * d * (1.0 + 1e-12), d), d * d, epsilon = 1e-9);
        assert!(huber_cost(100.0, 1.0) < 100.0);
    }
}

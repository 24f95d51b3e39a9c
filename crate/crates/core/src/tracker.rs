//! Semi-real-time global pose tracking.
//!
//! Each frame the tracker solves a 3-DOF problem over the current pose only:
//! an odometry factor to the reference pose, a prior tied to the anchor node
//! of the optimized map, and robust loop factors to map nodes inside the
//! submap. When the solve misses its deadline the last correction transform
//! is reused on the raw odometry instead.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::backend::optimize::{edge_error, huber_cost};
use crate::error::{Error, Result};
use crate::geometry::{
    clamped_inverse, compose, compound_covariance, inverse_compose, parameter_to_perturbation,
    perturbation_to_parameter, pose_residual, smd, Covariance3, Pose2D, Transform2D,
};
use crate::graph::{NodeId, NodeStatus, PoseGraph, EPS_SINGULAR, W_MAX};

/// Regularization added to summed covariances before inversion.
const COV_FLOOR: f64 = 1e-9;
const MAX_ITER: usize = 50;
const STEP_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackMode {
    Estimated,
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    pub node: NodeId,
    /// Pose of the current frame in the frame of `node`.
    pub measurement: Transform2D,
    pub information: Matrix3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Relative motion since the previous frame.
    pub odometry: Transform2D,
    pub odometry_info: Matrix3<f64>,
    pub loop_candidates: Vec<LoopCandidate>,
}

impl Observation {
    pub fn odometry_only(odometry: Transform2D, odometry_info: Matrix3<f64>) -> Self {
        Self {
            odometry,
            odometry_info,
            loop_candidates: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub deadline_ms: f64,
    pub submap_side: f64,
    pub huber_delta: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            deadline_ms: 50.0,
            submap_side: 10.0,
            huber_delta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub pose: Pose2D,
    /// Inverse of the final normal-equations matrix.
    pub cov: Covariance3,
    pub iterations: usize,
    /// Set when the iteration cap was reached before the step converged.
    pub low_confidence: bool,
}

#[derive(Clone, Debug)]
struct Increment {
    step: u64,
    odometry: Transform2D,
    /// Pose reported for this frame.
    estimate: Pose2D,
    /// Parameter covariance, `None` when the odometry carried no usable
    /// information.
    cov: Option<Covariance3>,
}

#[derive(Clone, Debug)]
pub struct TrackerState {
    pub config: TrackerConfig,
    /// Reference pose `x₀`.
    reference: Pose2D,
    /// Odometry increments after the reference frame.
    increments: VecDeque<Increment>,
    /// Last pose published by the optimizer and its covariance.
    last_pgo: Pose2D,
    last_pgo_cov: Covariance3,
    anchor: Option<NodeId>,
    anchor_pose: Pose2D,
    correction: Transform2D,
    /// Last corrected pose and the raw odometry pose it corrected.
    cached: Option<(Pose2D, Pose2D)>,
    raw: Pose2D,
    estimate: Pose2D,
    step: u64,
}

/// Optimized node closest to `last_pgo` in squared Mahalanobis distance under
/// the summed covariances. Ties go to the smallest id.
pub fn select_anchor(graph: &PoseGraph, last_pgo: &Pose2D, last_pgo_cov: &Covariance3) -> Result<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for n in graph.nodes().filter(|n| n.status == NodeStatus::Optimized) {
        let cov = Covariance3::from_matrix_unchecked(
            n.cov.matrix() + last_pgo_cov.matrix() + Matrix3::identity() * COV_FLOOR,
        );
        let d = smd(last_pgo, &n.pose, &cov)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((n.id, d));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::NoOptimizedNodes)
}

/// Correction `δT` with `δT ⊕ raw == estimated`.
pub fn correction_transform(estimated: &Pose2D, raw: &Pose2D) -> Transform2D {
    compose(estimated, &raw.inverse())
}

/// `T̂ ⊕ (T_od⁻¹ ⊕ new_raw)`: the new raw odometry carried by the last
/// correction.
pub fn cascade(corrected: &Pose2D, raw: &Pose2D, new_raw: &Pose2D) -> Pose2D {
    compose(corrected, &inverse_compose(raw, new_raw))
}

fn information_of(cov: &Covariance3) -> Matrix3<f64> {
    clamped_inverse(cov.matrix(), EPS_SINGULAR, W_MAX)
}

fn odometry_covariance(obs: &Observation) -> Option<Covariance3> {
    let info = Covariance3::from_matrix_unchecked(obs.odometry_info);
    if info.min_eigenvalue() <= EPS_SINGULAR {
        return None;
    }
    let cov = Covariance3::from_matrix_unchecked(clamped_inverse(&obs.odometry_info, 0.0, W_MAX));
    Some(perturbation_to_parameter(&obs.odometry, &cov))
}

/// One weighted factor on the current pose: residual, Jacobian, information
/// and optional Huber threshold.
struct Factor {
    kind: FactorKind,
    info: Matrix3<f64>,
    huber: Option<f64>,
}

enum FactorKind {
    Relative { base: Pose2D, z: Transform2D },
    Prior { mean: Pose2D },
}

impl Factor {
    fn linearize(&self, x: &Pose2D) -> (Vector3<f64>, Matrix3<f64>) {
        match &self.kind {
            FactorKind::Relative { base, z } => {
                let (e, _, b) = edge_error(base, x, z);
                (e, b)
            }
            FactorKind::Prior { mean } => (pose_residual(mean, x), Matrix3::identity()),
        }
    }

    fn cost(&self, x: &Pose2D) -> f64 {
        let (e, _) = self.linearize(x);
        let s = (e.transpose() * self.info * e)[0].max(0.0);
        match self.huber {
            Some(d) => huber_cost(s, d),
            None => s,
        }
    }
}

impl TrackerState {
    /// Tracker starting at `initial`, with raw odometry expressed in the same
    /// frame.
    pub fn new(initial: Pose2D, config: TrackerConfig) -> Self {
        Self {
            config,
            reference: initial,
            increments: VecDeque::new(),
            last_pgo: initial,
            last_pgo_cov: Covariance3::zero(),
            anchor: None,
            anchor_pose: initial,
            correction: Transform2D::identity(),
            cached: None,
            raw: initial,
            estimate: initial,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn reference(&self) -> Pose2D {
        self.reference
    }

    pub fn anchor(&self) -> Option<NodeId> {
        self.anchor
    }

    pub fn correction(&self) -> Transform2D {
        self.correction
    }

    pub fn raw_odometry_pose(&self) -> Pose2D {
        self.raw
    }

    pub fn current_estimate(&self) -> Pose2D {
        self.estimate
    }

    /// `x̄_k`: previous estimate moved by the observed odometry.
    pub fn predict(&self, obs: &Observation) -> Pose2D {
        compose(&self.estimate, &obs.odometry)
    }

    /// Odometry accumulated from the reference to the frame after `obs`, with
    /// its covariance when every increment was informative.
    fn reference_chain(&self, obs: &Observation) -> (Transform2D, Option<Covariance3>) {
        let mut z = Transform2D::identity();
        let mut cov = Some(Covariance3::zero());
        let latest = Increment {
            step: self.step + 1,
            odometry: obs.odometry,
            estimate: self.estimate,
            cov: odometry_covariance(obs),
        };
        for inc in self.increments.iter().chain(std::iter::once(&latest)) {
            cov = match (cov, inc.cov) {
                (Some(c), Some(ci)) => Some(compound_covariance(&z, &c, &inc.odometry, &ci)),
                _ => None,
            };
            z = compose(&z, &inc.odometry);
        }
        (z, cov)
    }

    fn factors(&self, graph: &PoseGraph, obs: &Observation) -> Result<(Pose2D, Vec<Factor>)> {
        let anchor = self.anchor.ok_or(Error::NoOptimizedNodes)?;
        let anchor_node = graph.node(anchor).ok_or(Error::UnknownNode(anchor))?;
        let predicted = self.predict(obs);
        let (z, z_cov) = self.reference_chain(obs);
        let mut factors = Vec::new();

        if let Some(zc) = &z_cov {
            factors.push(Factor {
                kind: FactorKind::Relative {
                    base: self.reference,
                    z,
                },
                info: information_of(&parameter_to_perturbation(&z, zc)),
                huber: None,
            });
        }
        // prior on the prediction, uncertain by the anchor, the last optimized
        // pose and the drift accumulated since the reference
        let mut prior = anchor_node.cov.matrix() + self.last_pgo_cov.matrix() + Matrix3::identity() * COV_FLOOR;
        if let Some(zc) = &z_cov {
            let rotated = compound_covariance(&self.reference, &Covariance3::zero(), &z, zc);
            prior += rotated.matrix();
        }
        factors.push(Factor {
            kind: FactorKind::Prior { mean: predicted },
            info: information_of(&Covariance3::from_matrix_unchecked(prior)),
            huber: None,
        });

        let submap = graph.submap_nodes(&predicted, self.config.submap_side);
        for c in &obs.loop_candidates {
            if submap.binary_search(&c.node).is_err() {
                continue;
            }
            let base = graph.node(c.node).ok_or(Error::UnknownNode(c.node))?.pose;
            factors.push(Factor {
                kind: FactorKind::Relative { base, z: c.measurement },
                info: c.information,
                huber: Some(self.config.huber_delta),
            });
        }
        Ok((predicted, factors))
    }

    /// Minimizes the sum of the odometry, anchor and loop terms over the
    /// current pose by Gauss-Newton with step halving.
    pub fn estimate_global_pose(&self, graph: &PoseGraph, obs: &Observation) -> Result<Estimate> {
        let (start, factors) = self.factors(graph, obs)?;
        let total = |x: &Pose2D| factors.iter().map(|f| f.cost(x)).sum::<f64>();
        let normal = |x: &Pose2D| {
            let mut h = Matrix3::zeros();
            let mut g = Vector3::zeros();
            for f in &factors {
                let (e, j) = f.linearize(x);
                let s = (e.transpose() * f.info * e)[0].max(0.0);
                let w = match f.huber {
                    Some(d) if s.sqrt() > d => d / s.sqrt(),
                    _ => 1.0,
                };
                h += j.transpose() * f.info * j * w;
                g += j.transpose() * f.info * e * w;
            }
            (h, g)
        };

        let mut x = start;
        let mut cost = total(&x);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < MAX_ITER {
            iterations += 1;
            let (h, g) = normal(&x);
            let chol = h.cholesky().ok_or(Error::Underconstrained)?;
            let dx = -chol.solve(&g);
            if !dx.iter().all(|v| v.is_finite()) {
                return Err(Error::Underconstrained);
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let v = dx * alpha;
                let cand = Pose2D::new(x.x() + v[0], x.y() + v[1], x.theta() + v[2]);
                let c = total(&cand);
                if c <= cost {
                    accepted = Some((cand, c, v.norm()));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((cand, c, step)) => {
                    x = cand;
                    cost = c;
                    if step < STEP_TOL {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // no decrease along the Gauss-Newton direction: at a minimum
                    converged = true;
                    break;
                }
            }
        }
        let (h, _) = normal(&x);
        let cov = h.try_inverse().ok_or(Error::Underconstrained)?;
        Ok(Estimate {
            pose: x,
            cov: Covariance3::from_matrix_unchecked(cov),
            iterations,
            low_confidence: !converged,
        })
    }

    /// Stores `δT` with `δT ⊕ raw == estimated` and caches both poses.
    pub fn apply_correction_cache(&mut self, estimated: &Pose2D, raw: &Pose2D) -> Transform2D {
        self.correction = correction_transform(estimated, raw);
        self.cached = Some((*estimated, *raw));
        self.correction
    }

    /// Fallback prediction from the cached correction; the raw pose itself
    /// when nothing is cached yet.
    pub fn worst_case_predict(&self, new_raw: &Pose2D) -> Pose2D {
        match &self.cached {
            Some((corrected, raw)) => cascade(corrected, raw, new_raw),
            None => *new_raw,
        }
    }

    /// Advances one frame: a full estimate when `elapsed_ms` is within the
    /// deadline, the cascaded fallback otherwise.
    pub fn track_step(&mut self, graph: &PoseGraph, obs: &Observation, elapsed_ms: f64) -> Result<(Pose2D, TrackMode)> {
        let new_raw = compose(&self.raw, &obs.odometry);
        let (pose, mode) = if elapsed_ms <= self.config.deadline_ms {
            let est = self.estimate_global_pose(graph, obs)?;
            self.apply_correction_cache(&est.pose, &new_raw);
            (est.pose, TrackMode::Estimated)
        } else {
            let pose = self.worst_case_predict(&new_raw);
            if self.cached.is_some() {
                self.cached = Some((pose, new_raw));
            }
            (pose, TrackMode::Fallback)
        };
        self.step += 1;
        self.increments.push_back(Increment {
            step: self.step,
            odometry: obs.odometry,
            estimate: pose,
            cov: odometry_covariance(obs),
        });
        self.raw = new_raw;
        self.estimate = pose;
        Ok((pose, mode))
    }

    /// Takes in a freshly optimized map. `node` is the map node of the frame
    /// at `node_step`, which becomes the new reference; the anchor is
    /// re-selected. The current estimate moves rigidly with the correction
    /// the optimizer applied to that frame, or with the old anchor's when the
    /// frame is no longer in the history.
    pub fn rebase(&mut self, graph: &PoseGraph, node: NodeId, node_step: u64) -> Result<()> {
        let n = graph.node(node).ok_or(Error::UnknownNode(node))?;
        if node_step > self.step {
            return Err(Error::InvalidConfig(format!(
                "reference step {node_step} is ahead of the tracker (step {})",
                self.step
            )));
        }
        let reported = if node_step == self.step {
            Some(self.estimate)
        } else {
            self.increments.iter().find(|i| i.step == node_step).map(|i| i.estimate)
        };
        if let Some(before) = reported {
            self.estimate = compose(&n.pose, &inverse_compose(&before, &self.estimate));
        } else if let Some(a) = self.anchor.and_then(|old| graph.node(old)) {
            let rel = inverse_compose(&self.anchor_pose, &self.estimate);
            self.estimate = compose(&a.pose, &rel);
        }
        self.last_pgo = n.pose;
        self.last_pgo_cov = n.cov;
        self.reference = n.pose;
        while self.increments.front().is_some_and(|i| i.step <= node_step) {
            self.increments.pop_front();
        }
        let anchor = select_anchor(graph, &self.last_pgo, &self.last_pgo_cov)?;
        self.anchor = Some(anchor);
        self.anchor_pose = graph.node(anchor).map(|a| a.pose).unwrap_or(self.last_pgo);
        if self.cached.is_some() {
            let (est, raw) = (self.estimate, self.raw);
            self.apply_correction_cache(&est, &raw);
        }
        Ok(())
    }
}

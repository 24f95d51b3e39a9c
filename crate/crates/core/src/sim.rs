//! Seeded synthetic pose-graph datasets with known ground truth.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backend::propagate_chain_covariances;
use crate::geometry::{compose, inverse_compose, Covariance3, Pose2D, Transform2D};
use crate::graph::{Edge, EdgeKind, NodeId, NodeSource, PoseGraph};
use crate::io::g2o::{DatasetRecord, EdgeRecord, VertexRecord};

/// Standard deviations of one relative measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Noise {
    pub const ZERO: Noise = Noise {
        sigma_xy: 0.0,
        sigma_theta: 0.0,
    };

    /// Information used for measurements with this noise. Noise-free
    /// measurements get a large finite weight.
    pub fn information(&self) -> Matrix3<f64> {
        let inv = |s: f64| if s > 0.0 { 1.0 / (s * s) } else { 1e6 };
        Matrix3::from_diagonal(&nalgebra::Vector3::new(
            inv(self.sigma_xy),
            inv(self.sigma_xy),
            inv(self.sigma_theta),
        ))
    }

    /// `z ⊕ ε` with `ε` drawn in the measurement frame.
    fn perturb(&self, z: &Transform2D, rng: &mut ChaCha8Rng) -> Transform2D {
        let draw = |s: f64, rng: &mut ChaCha8Rng| {
            if s > 0.0 {
                Normal::new(0.0, s).expect("positive sigma").sample(rng)
            } else {
                0.0
            }
        };
        let e = Pose2D::new(
            draw(self.sigma_xy, rng),
            draw(self.sigma_xy, rng),
            draw(self.sigma_theta, rng),
        );
        compose(z, &e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopClosure {
    pub from: NodeId,
    pub to: NodeId,
    /// Pose of `to` in the frame of `from`.
    pub measurement: Transform2D,
    pub information: Matrix3<f64>,
}

/// Ground-truth trajectory with noisy odometry between consecutive frames and
/// noisy loop closures. Node ids are frame indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub truth: Vec<Pose2D>,
    /// `odometry[k]` moves frame `k` to frame `k + 1`.
    pub odometry: Vec<Transform2D>,
    pub odometry_info: Matrix3<f64>,
    pub loops: Vec<LoopClosure>,
}

impl SyntheticDataset {
    /// Poses integrated from the first true pose along the noisy odometry.
    pub fn dead_reckoning(&self) -> Vec<Pose2D> {
        let mut out = Vec::with_capacity(self.truth.len());
        let mut p = self.truth.first().copied().unwrap_or_else(Pose2D::identity);
        out.push(p);
        for z in &self.odometry {
            p = compose(&p, z);
            out.push(p);
        }
        out
    }

    /// Pose graph initialized at the dead-reckoned poses.
    pub fn to_graph(&self) -> PoseGraph {
        let mut g = PoseGraph::new();
        for p in self.dead_reckoning() {
            g.add_node(p, Covariance3::zero(), NodeSource::Synthetic);
        }
        for (k, z) in self.odometry.iter().enumerate() {
            g.add_edge(Edge::odometry(k as NodeId, k as NodeId + 1, *z, self.odometry_info))
                .expect("consecutive frames exist");
        }
        for l in &self.loops {
            g.add_edge(Edge::new(
                l.from,
                l.to,
                EdgeKind::LoopLidar,
                l.measurement,
                l.information,
            ))
            .expect("loop endpoints exist");
        }
        propagate_chain_covariances(&mut g);
        g
    }

    pub fn to_record(&self) -> DatasetRecord {
        let vertices = self
            .dead_reckoning()
            .iter()
            .enumerate()
            .map(|(i, p)| VertexRecord {
                id: i as NodeId,
                x: p.x(),
                y: p.y(),
                theta: p.theta(),
            })
            .collect();
        let upper = |m: &Matrix3<f64>| [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]];
        let odo = self.odometry.iter().enumerate().map(|(k, z)| EdgeRecord {
            from: k as NodeId,
            to: k as NodeId + 1,
            dx: z.x(),
            dy: z.y(),
            dtheta: z.theta(),
            info: upper(&self.odometry_info),
        });
        let loops = self.loops.iter().map(|l| EdgeRecord {
            from: l.from,
            to: l.to,
            dx: l.measurement.x(),
            dy: l.measurement.y(),
            dtheta: l.measurement.theta(),
            info: upper(&l.information),
        });
        DatasetRecord {
            vertices,
            edges: odo.chain(loops).collect(),
            fixed: Vec::new(),
        }
    }
}

fn build(
    truth: Vec<Pose2D>,
    pairs: &[(NodeId, NodeId)],
    odo: Noise,
    loop_noise: Noise,
    rng: &mut ChaCha8Rng,
) -> SyntheticDataset {
    let odometry = truth
        .windows(2)
        .map(|w| odo.perturb(&inverse_compose(&w[0], &w[1]), rng))
        .collect();
    let loops = pairs
        .iter()
        .map(|&(a, b)| LoopClosure {
            from: a,
            to: b,
            measurement: loop_noise.perturb(&inverse_compose(&truth[a as usize], &truth[b as usize]), rng),
            information: loop_noise.information(),
        })
        .collect();
    SyntheticDataset {
        truth,
        odometry,
        odometry_info: odo.information(),
        loops,
    }
}

/// Repeated laps of a circle through the origin, `loop_every` frames per lap.
/// Each completed lap closes a loop to frame 0.
pub fn circle_laps(
    steps: usize,
    loop_every: usize,
    radius: f64,
    odo: Noise,
    loop_noise: Noise,
    seed: u64,
) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dphi = std::f64::consts::TAU / loop_every.max(1) as f64;
    let chord = 2.0 * radius * (dphi / 2.0).sin();
    let step = Pose2D::new(chord * (dphi / 2.0).cos(), chord * (dphi / 2.0).sin(), dphi);
    let mut truth = vec![Pose2D::identity()];
    for _ in 0..steps {
        let last = *truth.last().unwrap();
        truth.push(compose(&last, &step));
    }
    let pairs: Vec<(NodeId, NodeId)> = (1..=steps / loop_every.max(1))
        .map(|lap| (0, (lap * loop_every) as NodeId))
        .collect();
    build(truth, &pairs, odo, loop_noise, &mut rng)
}

/// Random walk on a unit grid in the style of the Manhattan benchmark.
/// Frames that revisit a grid vertex at least `min_gap` frames later close
/// a loop to the earliest visit, with probability `loop_prob`.
pub fn manhattan(
    steps: usize,
    world: i64,
    loop_prob: f64,
    min_gap: usize,
    odo: Noise,
    loop_noise: Noise,
    seed: u64,
) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell = (0i64, 0i64);
    let mut heading = 0i64;
    let mut truth = vec![Pose2D::identity()];
    let mut visits: std::collections::HashMap<(i64, i64), NodeId> = std::collections::HashMap::new();
    visits.insert(cell, 0);
    let mut pairs = Vec::new();
    for k in 1..=steps {
        let r: f64 = rng.random();
        let turn = if r < 0.7 {
            0
        } else if r < 0.85 {
            1
        } else {
            -1
        };
        let mut h = (heading + turn).rem_euclid(4);
        let dir = |h: i64| [(1, 0), (0, 1), (-1, 0), (0, -1)][h as usize];
        let (dx, dy) = dir(h);
        if (cell.0 + dx).abs() > world || (cell.1 + dy).abs() > world {
            h = (h + 2).rem_euclid(4);
        }
        let (dx, dy) = dir(h);
        heading = h;
        cell = (cell.0 + dx, cell.1 + dy);
        let theta = std::f64::consts::FRAC_PI_2 * h as f64;
        truth.push(Pose2D::new(cell.0 as f64, cell.1 as f64, theta));
        let id = k as NodeId;
        match visits.get(&cell) {
            Some(&first) if (id - first) as usize >= min_gap && rng.random::<f64>() < loop_prob => {
                pairs.push((first, id));
            }
            Some(_) => {}
            None => {
                visits.insert(cell, id);
            }
        }
    }
    build(truth, &pairs, odo, loop_noise, &mut rng)
}

//! Acceptance suite: one line per criterion.
//!
//! Criteria that need the public benchmark graphs look for them in the
//! directory named by `PGSLAM_DATASETS`, falling back to `datasets/` at the
//! workspace root. Missing data is reported as a failure line; it does not
//! abort the run, but any criterion that could be evaluated and failed
//! makes the process exit non-zero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pgslam::backend::sparsify::removable_edges_by_information;
use pgslam::backend::{chow_liu_sparsify, optimize, prune_cells, GridIndex, OptimizerConfig, WeightMode};
use pgslam::cli::{run_pipeline, run_track_replay, DelaySchedule, PipelineOptions, ReplayOptions};
use pgslam::geometry::{compose, inverse_compose, wrap_angle};
use pgslam::graph::{Edge, EdgeKind, MixtureComponent, NodeSource};
use pgslam::io::{parse_g2o, read_g2o, RunConfig};
use pgslam::sim::{circle_laps, Noise};
use pgslam::tracker::{TrackMode, TrackerConfig, TrackerState};
use pgslam::{Covariance3, NodeId, Pose2D, PoseGraph};

enum Verdict {
    Pass(String),
    Fail(String),
    /// Could not be evaluated here.
    Missing(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- datasets

fn dataset_dir() -> PathBuf {
    std::env::var_os("PGSLAM_DATASETS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets"))
}

/// First `.g2o` file in the dataset directory whose name contains one of
/// `keys`, case-insensitively.
fn find_dataset(keys: &[&str]) -> Result<PathBuf, String> {
    let dir = dataset_dir();
    let entries = std::fs::read_dir(&dir).map_err(|_| format!("dataset directory {} not found", dir.display()))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            name.ends_with(".g2o") && keys.iter().any(|k| name.contains(k))
        })
        .collect();
    hits.sort();
    hits.into_iter()
        .next()
        .ok_or_else(|| format!("no {} file in {}", keys.join("/"), dir.display()))
}

const CSAIL: &[&str] = &["csail"];
const FR079: &[&str] = &["fr079"];
const M3500: &[&str] = &["m3500", "manhattan"];

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

struct Reduction {
    nodes_before: usize,
    edges_before: usize,
    nodes: usize,
    edges: usize,
    npc: f64,
    arps: f64,
    degree_p90: u64,
    seconds: f64,
}

fn reduce(keys: &[&str]) -> Result<Reduction, String> {
    let path = find_dataset(keys)?;
    let start = Instant::now();
    let graph = read_g2o(&path).and_then(|r| r.to_graph()).map_err(|e| e.to_string())?;
    let (nodes_before, edges_before) = (graph.node_count(), graph.edge_count());
    let out = run_pipeline(graph, &RunConfig::default(), &PipelineOptions::default()).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let m = out.reports.last().expect("metrics stage");
    Ok(Reduction {
        nodes_before,
        edges_before,
        nodes: m.nodes,
        edges: m.edges,
        npc: m.npc.unwrap_or(f64::NAN),
        arps: m.arps_pct.unwrap_or(f64::NAN),
        degree_p90: m.extra["degree_p90"].as_u64().unwrap_or(u64::MAX),
        seconds,
    })
}

fn describe(r: &Reduction) -> String {
    format!(
        "{}->{} nodes, {}->{} edges, NPC {:.2}, ARPS {:.2}%, {:.1} s",
        r.nodes_before, r.nodes, r.edges_before, r.edges, r.npc, r.arps, r.seconds
    )
}

// --------------------------------------------------------------- criteria

fn c1_csail() -> Verdict {
    match reduce(CSAIL) {
        Err(e) => Verdict::Missing(e),
        Ok(r) => check(
            within(r.nodes as f64, 327.0, 0.2)
                && within(r.edges as f64, 354.0, 0.2)
                && r.npc <= 2.0
                && r.arps <= 5.0
                && r.seconds < 10.0,
            describe(&r) + " (target 327 nodes, 354 edges within 20%, NPC <= 2, ARPS <= 5%, < 10 s)",
        ),
    }
}

fn c2_fr079() -> Verdict {
    match reduce(FR079) {
        Err(e) => Verdict::Missing(e),
        Ok(r) => check(
            within(r.nodes as f64, 718.0, 0.2) && r.arps <= 5.0,
            describe(&r) + " (target 718 nodes within 20%, ARPS <= 5%)",
        ),
    }
}

fn c3_m3500() -> Verdict {
    match reduce(M3500) {
        Err(e) => Verdict::Missing(e),
        Ok(r) => check(
            within(r.nodes as f64, 1113.0, 0.2) && within(r.edges as f64, 1762.0, 0.25) && r.arps <= 10.0,
            describe(&r) + " (target 1113 nodes within 20%, 1762 edges within 25%, ARPS <= 10%)",
        ),
    }
}

fn c4_speed() -> Verdict {
    let path = match find_dataset(M3500) {
        Ok(p) => p,
        Err(e) => return Verdict::Missing(e),
    };
    let load = || -> Result<PoseGraph, String> {
        let mut g = read_g2o(&path).and_then(|r| r.to_graph()).map_err(|e| e.to_string())?;
        optimize(&mut g, &OptimizerConfig::default()).map_err(|e| e.to_string())?;
        Ok(g)
    };
    let time = |mode: WeightMode| -> Result<f64, String> {
        let mut g = load()?;
        let mut grid = GridIndex::new(1.0);
        let start = Instant::now();
        prune_cells(&mut g, &mut grid, 0.5, mode);
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    match (time(WeightMode::EdgeInfo), time(WeightMode::NodeInfo)) {
        (Ok(edge), Ok(node)) => check(
            node >= 10.0 * edge,
            format!(
                "edge_info {edge:.1} ms, node_info {node:.1} ms, ratio {:.1} (need >= 10)",
                node / edge
            ),
        ),
        (Err(e), _) | (_, Err(e)) => Verdict::Fail(e),
    }
}

fn c5_commercial() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, keys) in [("CSAIL", CSAIL), ("FR079", FR079), ("M3500", M3500)] {
        match reduce(keys) {
            Err(e) => return Verdict::Missing(e),
            Ok(r) => {
                ok &= r.npc <= 2.0 && r.degree_p90 <= 3 && r.arps < 10.0;
                lines.push(format!(
                    "{name}: NPC {:.2}, p90 degree {}, ARPS {:.2}%",
                    r.npc, r.degree_p90, r.arps
                ));
            }
        }
    }
    check(ok, lines.join("; "))
}

fn c6_fallback() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pose = |rng: &mut ChaCha8Rng| {
        Pose2D::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        )
    };
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (delta, raw, step) = (pose(&mut rng), pose(&mut rng), pose(&mut rng));
        let mut t = TrackerState::new(Pose2D::identity(), TrackerConfig::default());
        t.apply_correction_cache(&compose(&delta, &raw), &raw);
        let new_raw = compose(&raw, &step);
        let cascaded = t.worst_case_predict(&new_raw);
        let direct = compose(&delta, &new_raw);
        let err = (cascaded.x() - direct.x())
            .abs()
            .max((cascaded.y() - direct.y()).abs())
            .max(wrap_angle(cascaded.theta() - direct.theta()).abs());
        worst = worst.max(err);
    }

    let odo = Noise {
        sigma_xy: 0.02,
        sigma_theta: 0.5f64.to_radians(),
    };
    let d = circle_laps(300, 50, 4.0, odo, odo, 6);
    let opts = ReplayOptions {
        schedule: DelaySchedule::Constant(f64::INFINITY),
        single_thread: true,
        latency: 1,
    };
    let log = match run_track_replay(&d.to_graph(), &RunConfig::default(), &opts) {
        Ok(l) => l,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let raw = d.dead_reckoning();
    let origin = log[0].pose();
    let mut deviation = 0.0f64;
    for (s, r) in log.iter().zip(&raw) {
        let expected = compose(&origin, &inverse_compose(&raw[0], r));
        deviation = deviation.max((s.x - expected.x()).hypot(s.y - expected.y()));
    }
    let all_fallback = log[1..].iter().all(|s| s.mode == TrackMode::Fallback);
    check(
        worst <= 1e-9 && deviation <= 1e-9 && all_fallback,
        format!("max identity error {worst:.2e} over 10000 triples; all-fallback replay deviation {deviation:.2e} m"),
    )
}

/// Pose-graph residual written out independently of the library.
fn residual(xi: &[f64], xj: &[f64], z: &Pose2D) -> Vector3<f64> {
    let (si, ci) = xi[2].sin_cos();
    let (dx, dy) = (xj[0] - xi[0], xj[1] - xi[1]);
    let (lx, ly) = (ci * dx + si * dy - z.x(), -si * dx + ci * dy - z.y());
    let (sz, cz) = z.theta().sin_cos();
    Vector3::new(
        cz * lx + sz * ly,
        -sz * lx + cz * ly,
        wrap_angle(xj[2] - xi[2] - z.theta()),
    )
}

/// Dense Gauss-Newton with central-difference Jacobians; node 0 fixed.
fn dense_solve(n: usize, edges: &[(usize, usize, Pose2D, Matrix3<f64>)], init: &[Pose2D]) -> Vec<Pose2D> {
    let mut x: Vec<f64> = init.iter().flat_map(|p| [p.x(), p.y(), p.theta()]).collect();
    let dim = 3 * (n - 1);
    for _ in 0..100 {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for (i, j, z, info) in edges {
            let e = residual(&x[3 * i..3 * i + 3], &x[3 * j..3 * j + 3], z);
            let mut jac = DMatrix::<f64>::zeros(3, 3 * n);
            for k in [*i, *j] {
                for c in 0..3 {
                    let step = 1e-6;
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[3 * k + c] += step;
                    minus[3 * k + c] -= step;
                    let d = (residual(&plus[3 * i..3 * i + 3], &plus[3 * j..3 * j + 3], z)
                        - residual(&minus[3 * i..3 * i + 3], &minus[3 * j..3 * j + 3], z))
                        / (2.0 * step);
                    for r in 0..3 {
                        jac[(r, 3 * k + c)] = d[r];
                    }
                }
            }
            let jac = jac.columns(3, dim).into_owned();
            let w = DMatrix::from_iterator(3, 3, info.iter().copied());
            let ev = DVector::from_iterator(3, e.iter().copied());
            h += jac.transpose() * &w * &jac;
            g += jac.transpose() * &w * ev;
        }
        let dx = h.cholesky().expect("dense system is positive definite").solve(&(-g));
        for (k, v) in dx.iter().enumerate() {
            x[3 + k] += v;
        }
        if dx.amax() < 1e-12 {
            break;
        }
    }
    (0..n)
        .map(|k| Pose2D::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]))
        .collect()
}

fn max_pose_gap(a: &[Pose2D], b: &BTreeMap<NodeId, Pose2D>) -> f64 {
    a.iter()
        .enumerate()
        .map(|(k, p)| {
            let q = b[&(k as NodeId)];
            (p.x() - q.x())
                .abs()
                .max((p.y() - q.y()).abs())
                .max(wrap_angle(p.theta() - q.theta()).abs())
        })
        .fold(0.0, f64::max)
}

struct LoopGraph {
    n: usize,
    init: Vec<Pose2D>,
    edges: Vec<(usize, usize, Pose2D, Matrix3<f64>)>,
}

fn random_loop_graph(rng: &mut ChaCha8Rng) -> LoopGraph {
    let n = rng.random_range(4..=8);
    let step_noise = Normal::new(0.0, 0.05).unwrap();
    let mut truth = vec![Pose2D::identity()];
    for _ in 1..n {
        let step = Pose2D::new(
            rng.random_range(0.5..1.5),
            rng.random_range(-0.3..0.3),
            rng.random_range(-1.0..1.0),
        );
        truth.push(compose(truth.last().unwrap(), &step));
    }
    let noisy = |z: Pose2D, rng: &mut ChaCha8Rng| {
        Pose2D::new(
            z.x() + step_noise.sample(rng),
            z.y() + step_noise.sample(rng),
            z.theta() + 0.2 * step_noise.sample(rng),
        )
    };
    let info = Matrix3::from_diagonal(&Vector3::new(400.0, 400.0, 2500.0));
    let mut edges = Vec::new();
    for k in 1..n {
        edges.push((k - 1, k, noisy(inverse_compose(&truth[k - 1], &truth[k]), rng), info));
    }
    let loops = rng.random_range(1..=3);
    for _ in 0..loops {
        let i = rng.random_range(0..n - 2);
        let j = rng.random_range(i + 2..n);
        edges.push((i, j, noisy(inverse_compose(&truth[i], &truth[j]), rng), info));
    }
    let mut init = vec![Pose2D::identity()];
    for (i, _, z, _) in edges.iter().take(n - 1) {
        init.push(compose(&init[*i], z));
    }
    LoopGraph { n, init, edges }
}

fn to_graph(lg: &LoopGraph, outlier: Option<Edge>) -> PoseGraph {
    let mut g = PoseGraph::new();
    for p in &lg.init {
        g.add_node(*p, Covariance3::zero(), NodeSource::Synthetic);
    }
    for (k, (i, j, z, info)) in lg.edges.iter().enumerate() {
        let kind = if k < lg.n - 1 {
            EdgeKind::Odometry
        } else {
            EdgeKind::LoopLidar
        };
        g.add_edge(Edge::new(*i as NodeId, *j as NodeId, kind, *z, *info))
            .unwrap();
    }
    if let Some(e) = outlier {
        g.add_edge(e).unwrap();
    }
    g
}

fn c7_optimizer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Huber disabled so that both sides minimize the same quadratic cost
    let config = OptimizerConfig {
        huber_delta: 1e12,
        tol: 1e-15,
        max_iter: 200,
        ..OptimizerConfig::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let lg = random_loop_graph(&mut rng);
        let mut g = to_graph(&lg, None);
        if let Err(e) = optimize(&mut g, &config) {
            return Verdict::Fail(e.to_string());
        }
        let oracle = dense_solve(lg.n, &lg.edges, &lg.init);
        worst = worst.max(max_pose_gap(&oracle, &g.poses()));
    }

    let mut gated = 0;
    for _ in 0..100 {
        let lg = random_loop_graph(&mut rng);
        let mut clean = to_graph(&lg, None);
        optimize(&mut clean, &config).expect("clean solve");
        let (i, j) = (0, lg.n as NodeId - 1);
        let truth_rel = inverse_compose(&clean.node(i).unwrap().pose, &clean.node(j).unwrap().pose);
        let planted = Pose2D::new(truth_rel.x() + 10.0, truth_rel.y(), truth_rel.theta());
        let info = Matrix3::identity() * 100.0;
        let outlier = Edge::max_mixture(
            i,
            j,
            EdgeKind::LoopLidar,
            vec![
                MixtureComponent {
                    weight: 0.9,
                    information: info,
                    measurement: planted,
                },
                MixtureComponent {
                    weight: 0.1,
                    information: info * 1e-12,
                    measurement: planted,
                },
            ],
        );
        let mut dirty = to_graph(&lg, Some(outlier));
        if optimize(&mut dirty, &config).is_ok() {
            let gap = clean
                .poses()
                .iter()
                .map(|(id, p)| {
                    let q = dirty.node(*id).unwrap().pose;
                    (p.x() - q.x())
                        .abs()
                        .max((p.y() - q.y()).abs())
                        .max(wrap_angle(p.theta() - q.theta()).abs())
                })
                .fold(0.0, f64::max);
            if gap <= 1e-6 {
                gated += 1;
            }
        }
    }
    check(
        worst <= 1e-6 && gated >= 95,
        format!("max gap to dense solve {worst:.2e} over 50 graphs; outlier gated in {gated}/100 trials"),
    )
}

fn c8_tracker() -> Verdict {
    let odo = Noise {
        sigma_xy: 0.02,
        sigma_theta: 0.5f64.to_radians(),
    };
    let lc = Noise {
        sigma_xy: 0.01,
        sigma_theta: 0.1f64.to_radians(),
    };
    let d = circle_laps(500, 50, 4.0, odo, lc, 8);
    let g = d.to_graph();
    let config = RunConfig {
        seed: 8,
        ..RunConfig::default()
    };
    let t_rel = |schedule: DelaySchedule| -> Result<(f64, usize), String> {
        let opts = ReplayOptions {
            schedule,
            single_thread: true,
            latency: 1,
        };
        let log = run_track_replay(&g, &config, &opts).map_err(|e| e.to_string())?;
        let poses: Vec<Pose2D> = log.iter().map(|s| s.pose()).collect();
        let fallback = log.iter().filter(|s| s.mode == TrackMode::Fallback).count();
        Ok((
            pgslam::backend::metric_t_rel(&poses, &d.truth).map_err(|e| e.to_string())?,
            fallback,
        ))
    };
    let raw = pgslam::backend::metric_t_rel(&d.dead_reckoning(), &d.truth).unwrap();
    match (t_rel(DelaySchedule::Constant(0.0)), t_rel(DelaySchedule::Random(0.5))) {
        (Ok((tracked, _)), Ok((mixed, fallback))) => check(
            tracked <= 0.5 * raw && mixed <= 0.8 * raw,
            format!(
                "raw {raw:.3} m, tracked {tracked:.3} m ({:.2}x), mixed {mixed:.3} m ({:.2}x, {fallback}/500 fallback)",
                tracked / raw,
                mixed / raw
            ),
        ),
        (Err(e), _) | (_, Err(e)) => Verdict::Fail(e),
    }
}

/// Exhaustive maximum over all edge subsets that span the same components
/// as the full removable subgraph.
fn exhaustive_best(g: &PoseGraph) -> (f64, usize) {
    let edges: Vec<(NodeId, NodeId, f64)> = removable_edges_by_information(g)
        .into_iter()
        .map(|(id, mi)| {
            let e = g.edge(id).unwrap();
            (e.from, e.to, mi)
        })
        .collect();
    let components = |mask: usize| {
        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        fn find(p: &mut BTreeMap<NodeId, NodeId>, x: NodeId) -> NodeId {
            let up = *p.entry(x).or_insert(x);
            if up == x {
                x
            } else {
                let r = find(p, up);
                p.insert(x, r);
                r
            }
        }
        for (k, (a, b, _)) in edges.iter().enumerate() {
            find(&mut parent, *a);
            find(&mut parent, *b);
            if mask & (1 << k) != 0 {
                let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
                parent.insert(ra, rb);
            }
        }
        let keys: Vec<NodeId> = parent.keys().copied().collect();
        keys.into_iter()
            .map(|k| find(&mut parent, k))
            .collect::<BTreeSet<_>>()
            .len()
    };
    let full = (1usize << edges.len()) - 1;
    let target = components(full);
    let vertices: BTreeSet<NodeId> = edges.iter().flat_map(|(a, b, _)| [*a, *b]).collect();
    let size = vertices.len() - target;
    let mut best = f64::NEG_INFINITY;
    for mask in 0..=full {
        if mask.count_ones() as usize == size && components(mask) == target {
            let total: f64 = (0..edges.len())
                .filter(|k| mask & (1 << k) != 0)
                .map(|k| edges[k].2)
                .sum();
            best = best.max(total);
        }
    }
    (best, size)
}

fn c9_chow_liu() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut size_ok = true;
    for _ in 0..300 {
        let n = rng.random_range(2..=6);
        let mut g = PoseGraph::new();
        for _ in 0..n {
            g.add_node(Pose2D::identity(), Covariance3::zero(), NodeSource::Synthetic);
        }
        for k in 1..n {
            g.add_edge(Edge::odometry(
                k as NodeId - 1,
                k as NodeId,
                Pose2D::identity(),
                Matrix3::identity(),
            ))
            .unwrap();
        }
        let m = rng.random_range(0..=7);
        for _ in 0..m {
            let a = rng.random_range(0..n) as NodeId;
            let mut b = rng.random_range(0..n) as NodeId;
            if a == b {
                b = (b + 1) % n as NodeId;
            }
            let info = Matrix3::from_diagonal(&Vector3::new(
                rng.random_range(0.1..100.0),
                rng.random_range(0.1..100.0),
                rng.random_range(0.1..100.0),
            ));
            g.add_edge(Edge::new(a, b, EdgeKind::LoopLidar, Pose2D::identity(), info))
                .unwrap();
        }
        if m == 0 {
            continue;
        }
        let (best, size) = exhaustive_best(&g);
        chow_liu_sparsify(&mut g);
        let kept = removable_edges_by_information(&g);
        size_ok &= kept.len() == size;
        let total: f64 = kept.iter().map(|(_, mi)| mi).sum();
        worst = worst.max((total - best).abs() / best.abs().max(1.0));
    }
    check(
        size_ok && worst <= 1e-12,
        format!(
            "forest sizes match n - c: {size_ok}; max relative gap to exhaustive optimum {worst:.1e} over 300 graphs"
        ),
    )
}

fn c10_zero_constraints() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let n = 30;
    let build = |with_zc: bool, rng: &mut ChaCha8Rng| {
        let mut g = PoseGraph::new();
        let step = Pose2D::new(0.5, 0.0, 0.1);
        let mut p = Pose2D::identity();
        for k in 0..n {
            // lidar frame and camera frame captured at the same instant
            g.add_node(p, Covariance3::zero(), NodeSource::Lidar);
            g.add_node(p, Covariance3::zero(), NodeSource::Visual);
            if k > 0 {
                for cam in 0..2u64 {
                    let z = Pose2D::new(
                        step.x() + noise.sample(rng),
                        step.y() + noise.sample(rng),
                        step.theta() + 0.1 * noise.sample(rng),
                    );
                    let (a, b) = (2 * (k - 1) + cam, 2 * k + cam);
                    g.add_edge(Edge::odometry(a, b, z, Matrix3::identity() * 100.0))
                        .unwrap();
                }
            }
            p = compose(&p, &step);
        }
        g.add_edge(Edge::new(
            0,
            1,
            EdgeKind::LoopVisual,
            Pose2D::identity(),
            Matrix3::identity(),
        ))
        .unwrap();
        if with_zc {
            for k in 0..n {
                g.add_zero_constraint(2 * k, 2 * k + 1).unwrap();
            }
        }
        g
    };
    let agreement = |g: &PoseGraph| {
        (0..n as NodeId)
            .map(|k| {
                let rel = inverse_compose(&g.node(2 * k).unwrap().pose, &g.node(2 * k + 1).unwrap().pose);
                rel.x().abs().max(rel.y().abs()).max(rel.theta().abs())
            })
            .fold(0.0, f64::max)
    };
    let mut seeded = rng.clone();
    let mut with = build(true, &mut rng);
    let mut without = build(false, &mut seeded);
    let config = OptimizerConfig::default();
    if let Err(e) = optimize(&mut with, &config).and_then(|_| optimize(&mut without, &config)) {
        return Verdict::Fail(e.to_string());
    }
    let (a, b) = (agreement(&with), agreement(&without));
    check(
        a <= 1e-6 && b > 1e-3,
        format!("pair disagreement {a:.2e} with zero-constraints, {b:.2e} without"),
    )
}

fn c11_round_trip() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for keys in [CSAIL, FR079, M3500] {
        let path = match find_dataset(keys) {
            Ok(p) => p,
            Err(e) => return Verdict::Missing(e),
        };
        let first = match read_g2o(&path) {
            Ok(r) => r,
            Err(e) => return Verdict::Fail(format!("{}: {e}", path.display())),
        };
        let second = parse_g2o(&first.to_text()).expect("written text parses");
        let third = parse_g2o(&second.to_text()).expect("written text parses");
        let mut gap = 0.0f64;
        for (a, b) in first.vertices.iter().zip(&third.vertices) {
            gap = gap
                .max((a.x - b.x).abs())
                .max((a.y - b.y).abs())
                .max((a.theta - b.theta).abs());
        }
        for (a, b) in first.edges.iter().zip(&third.edges) {
            for k in 0..6 {
                gap = gap.max((a.info[k] - b.info[k]).abs());
            }
            gap = gap
                .max((a.dx - b.dx).abs())
                .max((a.dy - b.dy).abs())
                .max((a.dtheta - b.dtheta).abs());
        }
        let same_shape = first.vertices.len() == third.vertices.len() && first.edges.len() == third.edges.len();
        ok &= same_shape && gap <= 1e-9;
        lines.push(format!("{}: max gap {gap:.1e}", keys[0]));
    }
    check(ok, lines.join("; "))
}

type Criterion = (u8, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "CSAIL pruning regression", c1_csail),
        (2, "FR079 pruning regression", c2_fr079),
        (3, "M3500 pruning regression", c3_m3500),
        (4, "edge-information weighting speed-up", c4_speed),
        (5, "commercial criteria on all datasets", c5_commercial),
        (6, "worst-case fallback algebra", c6_fallback),
        (7, "optimizer oracle equivalence and outlier gating", c7_optimizer),
        (8, "tracker improvement over raw odometry", c8_tracker),
        (9, "Chow-Liu spanning forest optimality", c9_chow_liu),
        (10, "zero-constraint behavior", c10_zero_constraints),
        (11, "g2o round-trip on public datasets", c11_round_trip),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        match verdict {
            Verdict::Pass(d) => println!("criterion {id:>2} PASS  {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {d}");
            }
            Verdict::Missing(d) => println!("criterion {id:>2} FAIL  {name}: not evaluated, {d}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

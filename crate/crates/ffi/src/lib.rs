//! C ABI over the `pgslam` back-end.
//!
//! Graphs and trackers are opaque heap handles created and destroyed through
//! this interface. Every fallible call returns a [`PgslamStatus`]; on failure
//! the message is kept per thread and can be read with
//! [`pgslam_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pgslam::backend::{metric_arps, optimize};
use pgslam::cli::{run_pipeline, PipelineOptions};
use pgslam::graph::NodeSource;
use pgslam::io::{parse_g2o, read_g2o, write_g2o, EdgeRecord, RunConfig};
use pgslam::tracker::{Observation, TrackMode, TrackerState};
use pgslam::{Covariance3, Edge, EdgeKind, Error, Pose2D, PoseGraph};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgslamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    UnknownNode = 5,
    Numerical = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgslamEdgeKind {
    Odometry = 0,
    LoopVisual = 1,
    LoopLidar = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgslamTrackMode {
    Estimated = 0,
    Fallback = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PgslamPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Run parameters. Obtain defaults from [`pgslam_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgslamConfig {
    pub cell_size: f64,
    pub s: f64,
    /// Nonzero selects the node-information weight.
    pub node_weight: i32,
    pub submap_side: f64,
    pub window: usize,
    pub huber_delta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub deadline_ms: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PgslamOptimizeResult {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PgslamReduceResult {
    pub nodes_before: usize,
    pub edges_before: usize,
    pub nodes: usize,
    pub edges: usize,
    pub npc: f64,
    pub arps_pct: f64,
}

/// Opaque pose graph.
pub struct PgslamGraph {
    inner: PoseGraph,
}

/// Opaque pose tracker.
pub struct PgslamTracker {
    inner: TrackerState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PgslamStatus {
    match e {
        Error::Parse { .. } => PgslamStatus::Parse,
        Error::Io { .. } => PgslamStatus::Io,
        Error::UnknownNode(_) | Error::PrunedNode(_) => PgslamStatus::UnknownNode,
        Error::SingularCovariance
        | Error::Underconstrained
        | Error::SingularSystem
        | Error::DisconnectedGauge { .. } => PgslamStatus::Numerical,
        _ => PgslamStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (PgslamStatus, String)>) -> PgslamStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgslamStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PgslamStatus::Internal
        }
    }
}

fn lib(e: Error) -> (PgslamStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PgslamStatus, String) {
    (PgslamStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PgslamStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (PgslamStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PgslamStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PgslamStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn run_config(c: Option<&PgslamConfig>) -> Result<RunConfig, (PgslamStatus, String)> {
    let Some(c) = c else {
        return Ok(RunConfig::default());
    };
    let config = RunConfig {
        cell_size: c.cell_size,
        s: c.s,
        weight_mode: if c.node_weight != 0 {
            pgslam::backend::WeightMode::NodeInfo
        } else {
            pgslam::backend::WeightMode::EdgeInfo
        },
        submap_side: c.submap_side,
        window: c.window,
        huber_delta: c.huber_delta,
        max_iter: c.max_iter,
        tol: c.tol,
        deadline_ms: c.deadline_ms,
        ..RunConfig::default()
    };
    config.validate().map_err(lib)?;
    Ok(config)
}

fn pose_out(p: &Pose2D) -> PgslamPose {
    PgslamPose {
        x: p.x(),
        y: p.y(),
        theta: p.theta(),
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pgslam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pgslam_config_default() -> PgslamConfig {
    let c = RunConfig::default();
    PgslamConfig {
        cell_size: c.cell_size,
        s: c.s,
        node_weight: 0,
        submap_side: c.submap_side,
        window: c.window,
        huber_delta: c.huber_delta,
        max_iter: c.max_iter,
        tol: c.tol,
        deadline_ms: c.deadline_ms,
    }
}

/// Creates an empty graph. Free with [`pgslam_graph_free`].
#[no_mangle]
pub extern "C" fn pgslam_graph_new() -> *mut PgslamGraph {
    Box::into_raw(Box::new(PgslamGraph {
        inner: PoseGraph::new(),
    }))
}

/// # Safety
/// `graph` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_free(graph: *mut PgslamGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Parses g2o text into a new graph stored in `*out`.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_parse_g2o(text: *const c_char, out: *mut *mut PgslamGraph) -> PgslamStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let g = parse_g2o(string(text, "text")?)
            .and_then(|r| r.to_graph())
            .map_err(lib)?;
        *out = Box::into_raw(Box::new(PgslamGraph { inner: g }));
        Ok(())
    })
}

/// Reads a g2o file into a new graph stored in `*out`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_load(path: *const c_char, out: *mut *mut PgslamGraph) -> PgslamStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let g = read_g2o(Path::new(string(path, "path")?))
            .and_then(|r| r.to_graph())
            .map_err(lib)?;
        *out = Box::into_raw(Box::new(PgslamGraph { inner: g }));
        Ok(())
    })
}

/// Serializes the live part of the graph as g2o text. Free the result with
/// [`pgslam_string_free`]. Returns null if `graph` is null.
///
/// # Safety
/// `graph` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_to_g2o(graph: *const PgslamGraph) -> *mut c_char {
    let Some(g) = graph.as_ref() else {
        set_error("graph is null".into());
        return std::ptr::null_mut();
    };
    CString::new(write_g2o(&g.inner)).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgslam_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `graph` must be a valid handle and `id` writable.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_add_node(
    graph: *mut PgslamGraph,
    pose: PgslamPose,
    id: *mut u64,
) -> PgslamStatus {
    guard(|| {
        let g = deref_mut(graph, "graph")?;
        let id = deref_mut(id, "id")?;
        let p = Pose2D::new(pose.x, pose.y, pose.theta);
        if !p.is_finite() {
            return Err((PgslamStatus::InvalidArgument, "pose is not finite".into()));
        }
        *id = g.inner.add_node(p, Covariance3::zero(), NodeSource::Synthetic);
        Ok(())
    })
}

/// Adds a relative-pose edge. `info` holds the upper triangle of the 3×3
/// information matrix in g2o order (xx, xy, xt, yy, yt, tt).
///
/// # Safety
/// `graph` must be a valid handle and `info` must point to 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_add_edge(
    graph: *mut PgslamGraph,
    from: u64,
    to: u64,
    kind: PgslamEdgeKind,
    measurement: PgslamPose,
    info: *const f64,
) -> PgslamStatus {
    guard(|| {
        let g = deref_mut(graph, "graph")?;
        if info.is_null() {
            return Err(null("info"));
        }
        let values: [f64; 6] = std::slice::from_raw_parts(info, 6).try_into().expect("six values");
        let record = EdgeRecord {
            from,
            to,
            dx: measurement.x,
            dy: measurement.y,
            dtheta: measurement.theta,
            info: values,
        };
        let kind = match kind {
            PgslamEdgeKind::Odometry => EdgeKind::Odometry,
            PgslamEdgeKind::LoopVisual => EdgeKind::LoopVisual,
            PgslamEdgeKind::LoopLidar => EdgeKind::LoopLidar,
        };
        let z = Pose2D::new(measurement.x, measurement.y, measurement.theta);
        g.inner
            .add_edge(Edge::new(from, to, kind, z, record.information()))
            .map_err(lib)?;
        Ok(())
    })
}

/// Adds a rigid zero-constraint between two frames captured together.
///
/// # Safety
/// `graph` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_add_zero_constraint(graph: *mut PgslamGraph, a: u64, b: u64) -> PgslamStatus {
    guard(|| {
        deref_mut(graph, "graph")?
            .inner
            .add_zero_constraint(a, b)
            .map_err(lib)?;
        Ok(())
    })
}

/// Number of live nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_node_count(graph: *const PgslamGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.node_count())
}

/// Number of live edges, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_edge_count(graph: *const PgslamGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.edge_count())
}

/// # Safety
/// `graph` must be a valid handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_pose(graph: *const PgslamGraph, id: u64, out: *mut PgslamPose) -> PgslamStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let out = deref_mut(out, "out")?;
        let n = g
            .inner
            .node(id)
            .filter(|n| n.is_live())
            .ok_or_else(|| lib(Error::UnknownNode(id)))?;
        *out = pose_out(&n.pose);
        Ok(())
    })
}

/// Optimizes the graph in place. `config` and `result` may be null.
///
/// # Safety
/// `graph` must be a valid handle; non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_optimize(
    graph: *mut PgslamGraph,
    config: *const PgslamConfig,
    result: *mut PgslamOptimizeResult,
) -> PgslamStatus {
    guard(|| {
        let g = deref_mut(graph, "graph")?;
        let config = run_config(config.as_ref())?;
        let o = optimize(&mut g.inner, &config.optimizer()).map_err(lib)?;
        if let Some(r) = result.as_mut() {
            *r = PgslamOptimizeResult {
                iterations: o.iterations,
                initial_cost: o.initial_cost,
                final_cost: o.final_cost,
                converged: o.converged,
            };
        }
        Ok(())
    })
}

/// Runs the full reduction (optimize, prune, sparsify, re-optimize) and
/// replaces the graph with the reduced one. `config` and `result` may be
/// null.
///
/// # Safety
/// `graph` must be a valid handle; non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pgslam_graph_reduce(
    graph: *mut PgslamGraph,
    config: *const PgslamConfig,
    result: *mut PgslamReduceResult,
) -> PgslamStatus {
    guard(|| {
        let g = deref_mut(graph, "graph")?;
        let config = run_config(config.as_ref())?;
        let (nodes_before, edges_before) = (g.inner.node_count(), g.inner.edge_count());
        let out = run_pipeline(g.inner.clone(), &config, &PipelineOptions::default()).map_err(lib)?;
        let metrics = out.reports.last().expect("metrics stage is always reported");
        if let Some(r) = result.as_mut() {
            *r = PgslamReduceResult {
                nodes_before,
                edges_before,
                nodes: metrics.nodes,
                edges: metrics.edges,
                npc: metrics.npc.unwrap_or(f64::NAN),
                arps_pct: metrics.arps_pct.unwrap_or(f64::NAN),
            };
        }
        g.inner = out.result;
        Ok(())
    })
}

/// Average relative position shift (percent) of `candidate` against
/// `original` over shared node ids.
///
/// # Safety
/// Both handles must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pgslam_metric_arps(
    original: *const PgslamGraph,
    candidate: *const PgslamGraph,
    out: *mut f64,
) -> PgslamStatus {
    guard(|| {
        let a = deref(original, "original")?;
        let b = deref(candidate, "candidate")?;
        let out = deref_mut(out, "out")?;
        *out = metric_arps(&a.inner.poses(), &b.inner.poses()).map_err(lib)?;
        Ok(())
    })
}

/// Creates a tracker starting at `initial`. `config` may be null.
///
/// # Safety
/// `out` must be writable; `config` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn pgslam_tracker_new(
    initial: PgslamPose,
    config: *const PgslamConfig,
    out: *mut *mut PgslamTracker,
) -> PgslamStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let config = run_config(config.as_ref())?;
        let state = TrackerState::new(Pose2D::new(initial.x, initial.y, initial.theta), config.tracker());
        *out = Box::into_raw(Box::new(PgslamTracker { inner: state }));
        Ok(())
    })
}

/// # Safety
/// `tracker` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgslam_tracker_free(tracker: *mut PgslamTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Re-anchors the tracker on optimized node `node` of `graph`, which was
/// registered at tracker step `node_step`. Required once before the first
/// [`pgslam_tracker_step`] and after every map update.
///
/// # Safety
/// Both handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn pgslam_tracker_rebase(
    tracker: *mut PgslamTracker,
    graph: *const PgslamGraph,
    node: u64,
    node_step: u64,
) -> PgslamStatus {
    guard(|| {
        let t = deref_mut(tracker, "tracker")?;
        let g = deref(graph, "graph")?;
        t.inner.rebase(&g.inner, node, node_step).map_err(lib)
    })
}

/// Number of steps taken, or 0 for a null handle.
///
/// # Safety
/// `tracker` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pgslam_tracker_step_count(tracker: *const PgslamTracker) -> u64 {
    tracker.as_ref().map_or(0, |t| t.inner.step())
}

/// Advances the tracker by one odometry increment against the optimized
/// map in `graph`. A step whose `elapsed_ms` exceeds the deadline falls
/// back to dead reckoning on the cached correction. `info` holds the
/// odometry information upper triangle as in [`pgslam_graph_add_edge`].
///
/// # Safety
/// Handles must be valid, `info` must point to 6 doubles, and `pose` and
/// `mode` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgslam_tracker_step(
    tracker: *mut PgslamTracker,
    graph: *const PgslamGraph,
    odometry: PgslamPose,
    info: *const f64,
    elapsed_ms: f64,
    pose: *mut PgslamPose,
    mode: *mut PgslamTrackMode,
) -> PgslamStatus {
    guard(|| {
        let t = deref_mut(tracker, "tracker")?;
        let g = deref(graph, "graph")?;
        let pose = deref_mut(pose, "pose")?;
        let mode = deref_mut(mode, "mode")?;
        if info.is_null() {
            return Err(null("info"));
        }
        let values: [f64; 6] = std::slice::from_raw_parts(info, 6).try_into().expect("six values");
        let record = EdgeRecord {
            from: 0,
            to: 0,
            dx: 0.0,
            dy: 0.0,
            dtheta: 0.0,
            info: values,
        };
        let obs = Observation::odometry_only(
            Pose2D::new(odometry.x, odometry.y, odometry.theta),
            record.information(),
        );
        let (p, m) = t.inner.track_step(&g.inner, &obs, elapsed_ms).map_err(lib)?;
        *pose = pose_out(&p);
        *mode = match m {
            TrackMode::Estimated => PgslamTrackMode::Estimated,
            TrackMode::Fallback => PgslamTrackMode::Fallback,
        };
        Ok(())
    })
}

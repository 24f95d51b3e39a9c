//! Deterministic tracker replay over a dataset.

use std::collections::VecDeque;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::worker::{Backend, Command, WorkerConfig};
use crate::error::{Error, Result};
use crate::geometry::{Covariance3, Pose2D};
use crate::graph::{Edge, EdgeKind, NodeId, NodeSource, NodeStatus, PoseGraph};
use crate::io::RunConfig;
use crate::tracker::{LoopCandidate, Observation, TrackMode, TrackerState};

/// Synthetic per-step solve times fed to the deadline check.
#[derive(Clone, Debug, PartialEq)]
pub enum DelaySchedule {
    Constant(f64),
    /// Odd steps take no time, even steps never finish.
    Alternate,
    /// Each step misses the deadline with probability `p`.
    Random(f64),
    /// Values repeated in order.
    Cycle(Vec<f64>),
}

impl DelaySchedule {
    /// Elapsed times for steps `1..=steps`.
    pub fn delays(&self, steps: usize, seed: u64) -> Vec<f64> {
        match self {
            DelaySchedule::Constant(v) => vec![*v; steps],
            DelaySchedule::Alternate => (1..=steps)
                .map(|k| if k % 2 == 1 { 0.0 } else { f64::INFINITY })
                .collect(),
            DelaySchedule::Random(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..steps)
                    .map(|_| if rng.random::<f64>() < *p { f64::INFINITY } else { 0.0 })
                    .collect()
            }
            DelaySchedule::Cycle(v) if v.is_empty() => vec![0.0; steps],
            DelaySchedule::Cycle(v) => (0..steps).map(|k| v[k % v.len()]).collect(),
        }
    }
}

impl FromStr for DelaySchedule {
    type Err = String;

    /// `zero`, `inf`, `alternate`, `random:<p>` or a comma-separated list of
    /// milliseconds (`inf` allowed).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let number = |t: &str| -> std::result::Result<f64, String> {
            match t.trim() {
                "inf" => Ok(f64::INFINITY),
                t => t.parse::<f64>().map_err(|_| format!("invalid delay '{t}'")),
            }
        };
        match s {
            "zero" => Ok(Self::Constant(0.0)),
            "inf" => Ok(Self::Constant(f64::INFINITY)),
            "alternate" => Ok(Self::Alternate),
            _ => {
                if let Some(p) = s.strip_prefix("random:") {
                    let p = number(p)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(format!("fallback probability {p} outside [0, 1]"));
                    }
                    return Ok(Self::Random(p));
                }
                let values = s.split(',').map(number).collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(Self::Cycle(values))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayStep {
    pub step: u64,
    pub node: NodeId,
    pub mode: TrackMode,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl ReplayStep {
    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOptions {
    pub schedule: DelaySchedule,
    /// Run the back-end on the caller's thread.
    pub single_thread: bool,
    /// Frames between an optimization request and the tracker taking in its
    /// snapshot.
    pub latency: u64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            schedule: DelaySchedule::Constant(0.0),
            single_thread: false,
            latency: 1,
        }
    }
}

struct Frame {
    id: NodeId,
    odometry: Edge,
    loops: Vec<Edge>,
}

fn frames(dataset: &PoseGraph) -> Result<Vec<Frame>> {
    let ids = dataset.node_ids();
    let mut out = Vec::with_capacity(ids.len().saturating_sub(1));
    for w in ids.windows(2) {
        let (prev, id) = (w[0], w[1]);
        let mut odometry = None;
        let mut loops = Vec::new();
        for e in dataset.incident_edges(id).iter().filter_map(|e| dataset.edge(*e)) {
            let other = e.other(id);
            if other == prev && e.kind == EdgeKind::Odometry && odometry.is_none() {
                odometry = Some(e.clone());
            } else if other < id {
                loops.push(e.clone());
            }
        }
        let odometry = odometry.ok_or(Error::MissingOdometry(prev, id))?;
        out.push(Frame { id, odometry, loops });
    }
    Ok(out)
}

/// Replays the dataset's odometry in id order through the tracker. Loop
/// edges become loop candidates at their later endpoint and trigger a
/// back-end optimization whose snapshot reaches the tracker `latency`
/// frames later. The log holds the reported pose of every frame.
pub fn run_track_replay(dataset: &PoseGraph, config: &RunConfig, options: &ReplayOptions) -> Result<Vec<ReplayStep>> {
    config.validate()?;
    let ids = dataset.node_ids();
    let first = *ids
        .first()
        .ok_or_else(|| Error::EmptyTrajectory("dataset has no nodes".into()))?;
    let start = dataset.node(first).ok_or(Error::UnknownNode(first))?.pose;
    let frames = frames(dataset)?;
    let delays = options.schedule.delays(frames.len(), config.seed);

    let mut map = PoseGraph::new();
    map.add_node_with_id(first, start, Covariance3::zero(), NodeSource::Synthetic)?;
    map.set_status(first, NodeStatus::Optimized)?;
    let mut snapshot = Arc::new(map.clone());
    let worker = WorkerConfig {
        optimizer: config.optimizer(),
        window: config.window,
    };
    let mut backend = if options.single_thread {
        Backend::inline(map, worker)
    } else {
        Backend::spawn(map, worker)
    };

    let mut tracker = TrackerState::new(start, config.tracker());
    tracker.rebase(&snapshot, first, 0)?;
    let mut log = vec![ReplayStep {
        step: 0,
        node: first,
        mode: TrackMode::Estimated,
        x: start.x(),
        y: start.y(),
        theta: start.theta(),
    }];
    let mut pending: VecDeque<(u64, NodeId)> = VecDeque::new();

    for (k, frame) in frames.iter().enumerate() {
        let step = k as u64 + 1;
        while pending.front().is_some_and(|(s, _)| s + options.latency <= step) {
            let (tag, node) = pending.pop_front().expect("checked front");
            let snap = backend.recv()?;
            debug_assert_eq!(snap.tag, tag);
            snapshot = snap.graph;
            tracker.rebase(&snapshot, node, tag)?;
        }
        let prev = frame.odometry.other(frame.id);
        let obs = Observation {
            odometry: frame.odometry.measurement_from(prev),
            odometry_info: frame.odometry.information_from(prev),
            loop_candidates: frame
                .loops
                .iter()
                .map(|e| {
                    let other = e.other(frame.id);
                    LoopCandidate {
                        node: other,
                        measurement: e.measurement_from(other),
                        information: e.information_from(other),
                    }
                })
                .collect(),
        };
        let (pose, mode) = tracker.track_step(&snapshot, &obs, delays[k])?;
        log.push(ReplayStep {
            step,
            node: frame.id,
            mode,
            x: pose.x(),
            y: pose.y(),
            theta: pose.theta(),
        });

        let mut edges = vec![frame.odometry.clone()];
        edges.extend(frame.loops.iter().cloned());
        backend.submit(Command::Add {
            nodes: vec![(frame.id, pose)],
            edges,
        })?;
        if !frame.loops.is_empty() {
            backend.submit(Command::Optimize { tag: step })?;
            pending.push_back((step, frame.id));
        }
    }
    // drain outstanding snapshots so worker errors surface
    for _ in pending {
        backend.recv()?;
    }
    backend.finish()?;
    Ok(log)
}

//! Back-end worker: takes node and edge batches through an ordered queue and
//! publishes immutable optimized snapshots.

use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::optimize::{optimize, OptimizeOutcome, OptimizerConfig};
use super::prune::{oriented, propagate_chain_covariances};
use super::temporal::make_temporal_node;
use crate::error::{Error, Result};
use crate::geometry::{compose, compound_covariance, inverse_compose, Covariance3, Pose2D, Transform2D};
use crate::graph::{Edge, EdgeKind, NodeId, NodeSource, NodeStatus, PoseGraph};

#[derive(Clone, Debug)]
pub enum Command {
    /// New frames with their initial poses, and edges among known frames.
    Add {
        nodes: Vec<(NodeId, Pose2D)>,
        edges: Vec<Edge>,
    },
    /// Batch temporal nodes, optimize and publish a snapshot tagged `tag`.
    Optimize { tag: u64 },
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub tag: u64,
    pub graph: Arc<PoseGraph>,
    pub outcome: OptimizeOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerConfig {
    pub optimizer: OptimizerConfig,
    /// Unregistered frames kept before the oldest becomes a temporal node.
    pub window: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            window: 5,
        }
    }
}

/// Odometry composed along consecutive ids from `from` to `to`, with its
/// parameter covariance. `None` when the chain is broken.
pub fn odometry_chain(graph: &PoseGraph, from: NodeId, to: NodeId) -> Option<(Transform2D, Covariance3)> {
    let mut z = Transform2D::identity();
    let mut cov = Covariance3::zero();
    let mut at = from;
    while at < to {
        let next = graph
            .incident_edges(at)
            .iter()
            .filter_map(|e| graph.edge(*e))
            .filter(|e| e.kind == EdgeKind::Odometry && e.other(at) > at && e.other(at) <= to)
            .min_by_key(|e| e.other(at))?;
        let (step, step_cov) = oriented(&next.measurement, &next.covariance(), next.from == at);
        cov = compound_covariance(&z, &cov, &step, &step_cov);
        z = compose(&z, &step);
        at = next.other(at);
    }
    Some((z, cov))
}

/// Converts unregistered frames to temporal nodes while at least `window`
/// of them are waiting. The offset from the base comes from the odometry
/// chain, or from the current poses when `keep_poses` is set; the
/// covariance is always compounded along the chain. Returns the converted
/// ids.
pub fn batch_temporal(graph: &mut PoseGraph, window: usize, keep_poses: bool) -> Result<Vec<NodeId>> {
    let window = window.max(1);
    let pending: Vec<NodeId> = graph
        .nodes()
        .filter(|n| n.status == NodeStatus::Unregistered)
        .map(|n| n.id)
        .collect();
    let optimized: Vec<NodeId> = graph
        .nodes()
        .filter(|n| n.status == NodeStatus::Optimized)
        .map(|n| n.id)
        .collect();
    let mut out = Vec::new();
    // odometry accumulated from the current base, extended frame by frame
    let mut cursor: Option<(NodeId, NodeId, Transform2D, Covariance3)> = None;
    for (i, &first) in pending.iter().enumerate() {
        if pending.len() - i < window {
            break;
        }
        let Some(&base) = optimized.get(optimized.partition_point(|&o| o < first).wrapping_sub(1)) else {
            break;
        };
        let base_pose = graph.node(base).ok_or(Error::UnknownNode(base))?.pose;
        let pose = graph.node(first).ok_or(Error::UnknownNode(first))?.pose;
        let chain = match cursor {
            Some((b, at, z, cov)) if b == base => odometry_chain(graph, at, first)
                .map(|(step, step_cov)| (compose(&z, &step), compound_covariance(&z, &cov, &step, &step_cov))),
            _ => odometry_chain(graph, base, first),
        };
        cursor = chain.map(|(z, cov)| (base, first, z, cov));
        let (delta, delta_cov) = match chain {
            Some((_, cov)) if keep_poses => (inverse_compose(&base_pose, &pose), cov),
            Some(c) => c,
            None => (inverse_compose(&base_pose, &pose), Covariance3::zero()),
        };
        out.push(make_temporal_node(graph, window, &delta, &delta_cov)?);
    }
    Ok(out)
}

/// The state owned by the worker.
#[derive(Debug)]
pub struct BackendCore {
    graph: PoseGraph,
    config: WorkerConfig,
}

impl BackendCore {
    pub fn new(graph: PoseGraph, config: WorkerConfig) -> Self {
        Self { graph, config }
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn into_graph(self) -> PoseGraph {
        self.graph
    }

    pub fn handle(&mut self, cmd: Command) -> Result<Option<Snapshot>> {
        match cmd {
            Command::Add { nodes, edges } => {
                for (id, pose) in nodes {
                    self.graph
                        .add_node_with_id(id, pose, Covariance3::zero(), NodeSource::Synthetic)?;
                }
                for e in edges {
                    self.graph.add_edge(e)?;
                }
                Ok(None)
            }
            Command::Optimize { tag } => {
                batch_temporal(&mut self.graph, self.config.window, false)?;
                let outcome = optimize(&mut self.graph, &self.config.optimizer)?;
                propagate_chain_covariances(&mut self.graph);
                Ok(Some(Snapshot {
                    tag,
                    graph: self.graph.snapshot(),
                    outcome,
                }))
            }
        }
    }
}

enum Mode {
    Inline {
        core: BackendCore,
        ready: VecDeque<Result<Snapshot>>,
    },
    Threaded {
        tx: Option<Sender<Command>>,
        rx: Receiver<Result<Snapshot>>,
        handle: Option<JoinHandle<BackendCore>>,
    },
}

/// Handle to the worker. In inline mode every command runs on the caller's
/// thread as it is submitted; both modes deliver the same snapshots in the
/// same order.
pub struct Backend {
    mode: Mode,
}

impl Backend {
    pub fn inline(graph: PoseGraph, config: WorkerConfig) -> Self {
        Self {
            mode: Mode::Inline {
                core: BackendCore::new(graph, config),
                ready: VecDeque::new(),
            },
        }
    }

    pub fn spawn(graph: PoseGraph, config: WorkerConfig) -> Self {
        let (tx, cmd_rx) = channel::<Command>();
        let (snap_tx, rx) = channel();
        let handle = std::thread::spawn(move || {
            let mut core = BackendCore::new(graph, config);
            for cmd in cmd_rx {
                match core.handle(cmd) {
                    Ok(None) => {}
                    Ok(Some(s)) => {
                        if snap_tx.send(Ok(s)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = snap_tx.send(Err(e));
                    }
                }
            }
            core
        });
        Self {
            mode: Mode::Threaded {
                tx: Some(tx),
                rx,
                handle: Some(handle),
            },
        }
    }

    pub fn submit(&mut self, cmd: Command) -> Result<()> {
        match &mut self.mode {
            Mode::Inline { core, ready } => {
                match core.handle(cmd) {
                    Ok(Some(s)) => ready.push_back(Ok(s)),
                    Ok(None) => {}
                    Err(e) => ready.push_back(Err(e)),
                }
                Ok(())
            }
            Mode::Threaded { tx, .. } => tx
                .as_ref()
                .ok_or(Error::WorkerStopped)?
                .send(cmd)
                .map_err(|_| Error::WorkerStopped),
        }
    }

    /// Next published snapshot if one is ready.
    pub fn try_recv(&mut self) -> Option<Result<Snapshot>> {
        match &mut self.mode {
            Mode::Inline { ready, .. } => ready.pop_front(),
            Mode::Threaded { rx, .. } => rx.try_recv().ok(),
        }
    }

    /// Next published snapshot, waiting for the worker if needed.
    pub fn recv(&mut self) -> Result<Snapshot> {
        match &mut self.mode {
            Mode::Inline { ready, .. } => ready.pop_front().unwrap_or(Err(Error::WorkerStopped)),
            Mode::Threaded { rx, .. } => rx.recv().map_err(|_| Error::WorkerStopped)?,
        }
    }

    /// Drains the queue and returns the worker's final graph.
    pub fn finish(self) -> Result<PoseGraph> {
        match self.mode {
            Mode::Inline { core, .. } => Ok(core.into_graph()),
            Mode::Threaded { mut tx, mut handle, .. } => {
                tx.take();
                let core = handle
                    .take()
                    .ok_or(Error::WorkerStopped)?
                    .join()
                    .map_err(|_| Error::WorkerStopped)?;
                Ok(core.into_graph())
            }
        }
    }
}

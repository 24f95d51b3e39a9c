use std::path::PathBuf;

use crate::graph::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("singular covariance: uncertainty is degenerate")]
    SingularCovariance,

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("node {0} is pruned")]
    PrunedNode(NodeId),

    #[error("edge endpoints must differ (node {0})")]
    SelfLoop(NodeId),

    #[error("insufficient window: {have} unregistered nodes, need {need}")]
    InsufficientWindow { have: usize, need: usize },

    #[error("no optimized node available as base for the temporal node")]
    NoBaseNode,

    #[error("tracker cannot start: the map has no optimized nodes")]
    NoOptimizedNodes,

    #[error("underconstrained problem: normal equations are singular")]
    Underconstrained,

    #[error("gauge node {gauge} cannot reach {} node(s), first unreachable id {}", .unreachable.len(), .unreachable.first().copied().unwrap_or_default())]
    DisconnectedGauge { gauge: NodeId, unreachable: Vec<NodeId> },

    #[error("singular normal equations")]
    SingularSystem,

    #[error("no comparable nodes")]
    NoComparableNodes,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty trajectory: {0}")]
    EmptyTrajectory(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no odometry edge between nodes {0} and {1}")]
    MissingOdometry(NodeId, NodeId),

    #[error("backend worker stopped")]
    WorkerStopped,
}

pub type Result<T> = std::result::Result<T, Error>;

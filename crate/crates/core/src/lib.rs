//! Lightweight 2D pose-graph SLAM back-end.
//!
//! The crate covers SE(2) pose algebra, a multigraph pose model with
//! zero-constraint edges, an anchor-based pose tracker with a worst-case
//! fallback, grid-based node pruning with Chow-Liu edge sparsification, and
//! robust sparse pose-graph optimization.

pub mod backend;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{Covariance3, Pose2D, Transform2D};
pub use graph::{Edge, EdgeKind, NodeId, PoseGraph};

use std::collections::BTreeMap;

use crate::geometry::Pose2D;
use crate::graph::{NodeId, PoseGraph};

pub type Cell = (i64, i64);

/// Spatial hash of live nodes into square cells of side `cell_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridIndex {
    cell_size: f64,
    cells: BTreeMap<Cell, Vec<NodeId>>,
    lookup: BTreeMap<NodeId, Cell>,
}

impl GridIndex {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        Self {
            cell_size,
            cells: BTreeMap::new(),
            lookup: BTreeMap::new(),
        }
    }

    /// Indexes every live node at its current pose.
    pub fn build(graph: &PoseGraph, cell_size: f64) -> Self {
        let mut grid = Self::new(cell_size);
        for n in graph.nodes() {
            grid.insert(n.id, &n.pose);
        }
        grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, pose: &Pose2D) -> Cell {
        (
            (pose.x() / self.cell_size).floor() as i64,
            (pose.y() / self.cell_size).floor() as i64,
        )
    }

    pub fn insert(&mut self, id: NodeId, pose: &Pose2D) {
        self.remove(id);
        let cell = self.cell_of(pose);
        let list = self.cells.entry(cell).or_default();
        let at = list.partition_point(|x| *x < id);
        list.insert(at, id);
        self.lookup.insert(id, cell);
    }

    pub fn remove(&mut self, id: NodeId) {
        if let Some(cell) = self.lookup.remove(&id) {
            if let Some(list) = self.cells.get_mut(&cell) {
                list.retain(|x| *x != id);
                if list.is_empty() {
                    self.cells.remove(&cell);
                }
            }
        }
    }

    pub fn cell_for_node(&self, id: NodeId) -> Option<Cell> {
        self.lookup.get(&id).copied()
    }

    /// Occupied cells with their members (ascending ids), in cell order.
    pub fn cells(&self) -> impl Iterator<Item = (&Cell, &Vec<NodeId>)> {
        self.cells.iter()
    }

    pub fn members(&self, cell: &Cell) -> &[NodeId] {
        self.cells.get(cell).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes in the 3×3 block of cells around `cell`, itself included.
    pub fn neighborhood(&self, cell: &Cell) -> Vec<NodeId> {
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                out.extend_from_slice(self.members(&(cell.0 + dx, cell.1 + dy)));
            }
        }
        out
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn node_count(&self) -> usize {
        self.lookup.len()
    }

    /// Average number of nodes per occupied cell.
    pub fn npc(&self) -> f64 {
        if self.cells.is_empty() {
            0.0
        } else {
            self.node_count() as f64 / self.cells.len() as f64
        }
    }

    pub fn max_per_cell(&self) -> usize {
        self.cells.values().map(Vec::len).max().unwrap_or(0)
    }
}

use serde::Serialize;

use crate::graph::PoseGraph;

/// One JSON line per pipeline stage. Metrics not computed at a stage are
/// `null`; `elapsed_ms` is `null` unless timing was requested, so reports
/// stay byte-identical across runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub nodes: usize,
    pub edges: usize,
    pub npc: Option<f64>,
    pub arps_pct: Option<f64>,
    pub t_rel_m: Option<f64>,
    pub elapsed_ms: Option<f64>,
    #[serde(flatten, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl StageReport {
    pub fn new(stage: &str, graph: &PoseGraph) -> Self {
        Self {
            stage: stage.to_string(),
            nodes: graph.node_count(),
            edges: graph.edge_count(),
            npc: None,
            arps_pct: None,
            t_rel_m: None,
            elapsed_ms: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("stage report serializes")
    }
}

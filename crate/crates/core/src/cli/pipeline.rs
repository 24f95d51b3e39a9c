//! The fixed load → track → temporal → optimize → prune → sparsify →
//! optimize → metrics sequence.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::backend::worker::batch_temporal;
use crate::backend::{
    chow_liu_sparsify, degree_percentile, metric_arps, metric_t_rel, optimize, prune_cells, GridIndex,
};
use crate::error::Result;
use crate::geometry::Pose2D;
use crate::graph::{NodeId, NodeStatus, PoseGraph};
use crate::io::{RunConfig, StageReport};

use super::replay::{run_track_replay, ReplayOptions, ReplayStep};

/// Stage names in execution order.
pub const STAGES: [&str; 8] = [
    "load",
    "track",
    "temporal",
    "optimize",
    "prune",
    "sparsify",
    "reoptimize",
    "metrics",
];

#[derive(Clone, Debug, Default)]
pub struct PipelineOptions {
    /// Replay the odometry through the tracker and start from its poses.
    pub track: Option<ReplayOptions>,
    /// Ground truth by node id, for `t_rel`.
    pub truth: Option<BTreeMap<NodeId, Pose2D>>,
    /// Record wall-clock time per stage. Off by default so that reports
    /// are byte-identical across runs.
    pub timing: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub reports: Vec<StageReport>,
    /// Full graph after the first optimization.
    pub baseline: PoseGraph,
    /// Pruned, sparsified and re-optimized graph.
    pub result: PoseGraph,
    pub tracked: Option<Vec<ReplayStep>>,
}

/// Root-mean-square position error of `graph` over the ids it shares with
/// `truth`.
pub fn t_rel_against(graph: &PoseGraph, truth: &BTreeMap<NodeId, Pose2D>) -> Result<f64> {
    let (est, gt): (Vec<Pose2D>, Vec<Pose2D>) = graph
        .nodes()
        .filter_map(|n| truth.get(&n.id).map(|t| (n.pose, *t)))
        .unzip();
    metric_t_rel(&est, &gt)
}

struct Clock {
    enabled: bool,
    start: Instant,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            start: Instant::now(),
        }
    }

    fn lap(&mut self) -> Option<f64> {
        let ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.start = Instant::now();
        self.enabled.then_some(ms)
    }
}

pub fn run_pipeline(mut graph: PoseGraph, config: &RunConfig, options: &PipelineOptions) -> Result<PipelineOutput> {
    config.validate()?;
    let mut reports = Vec::new();
    let mut clock = Clock::new(options.timing);
    let opt = config.optimizer();

    let mut r = StageReport::new("load", &graph);
    r.elapsed_ms = clock.lap();
    reports.push(r);

    let tracked = match &options.track {
        Some(replay) => {
            let log = run_track_replay(&graph, config, replay)?;
            for s in &log {
                graph.set_pose(s.node, s.pose())?;
            }
            let fallback = log
                .iter()
                .filter(|s| s.mode == crate::tracker::TrackMode::Fallback)
                .count();
            let mut r = StageReport::new("track", &graph).with("fallback_steps", fallback);
            if let Some(t) = &options.truth {
                r.t_rel_m = Some(t_rel_against(&graph, t)?);
            }
            r.elapsed_ms = clock.lap();
            reports.push(r);
            Some(log)
        }
        None => None,
    };

    if let Some(first) = graph.node_ids().first().copied() {
        graph.set_status(first, NodeStatus::Optimized)?;
    }
    let temporal = batch_temporal(&mut graph, config.window, true)?;
    let mut r = StageReport::new("temporal", &graph).with("temporal_nodes", temporal.len());
    r.elapsed_ms = clock.lap();
    reports.push(r);

    let out = optimize(&mut graph, &opt)?;
    let mut r = StageReport::new("optimize", &graph)
        .with("iterations", out.iterations)
        .with("final_cost", out.final_cost);
    r.elapsed_ms = clock.lap();
    reports.push(r);
    let baseline = graph.clone();

    let mut grid = GridIndex::new(config.cell_size);
    let pr = prune_cells(&mut graph, &mut grid, config.s, config.weight_mode);
    let mut r = StageReport::new("prune", &graph)
        .with("eliminated", pr.eliminated.len())
        .with("edges_added", pr.edges_added);
    r.npc = Some(pr.npc);
    r.elapsed_ms = clock.lap();
    reports.push(r);

    let removed = chow_liu_sparsify(&mut graph);
    let mut r = StageReport::new("sparsify", &graph).with("removed_edges", removed);
    r.elapsed_ms = clock.lap();
    reports.push(r);

    let out = optimize(&mut graph, &opt)?;
    let mut r = StageReport::new("reoptimize", &graph)
        .with("iterations", out.iterations)
        .with("final_cost", out.final_cost);
    r.elapsed_ms = clock.lap();
    reports.push(r);

    let grid = GridIndex::build(&graph, config.cell_size);
    let mut r = StageReport::new("metrics", &graph)
        .with("nodes_before", baseline.node_count())
        .with("edges_before", baseline.edge_count())
        .with("degree_p90", degree_percentile(&graph, 90.0))
        .with(
            "max_per_cell",
            GridIndex::build(&graph, config.cell_size).max_per_cell(),
        );
    r.npc = Some(grid.npc());
    r.arps_pct = Some(metric_arps(&baseline.poses(), &graph.poses())?);
    if let Some(t) = &options.truth {
        r.t_rel_m = Some(t_rel_against(&graph, t)?);
    }
    r.elapsed_ms = clock.lap();
    reports.push(r);

    Ok(PipelineOutput {
        reports,
        baseline,
        result: graph,
        tracked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{manhattan, Noise};

    fn dataset() -> crate::sim::SyntheticDataset {
        let n = Noise {
            sigma_xy: 0.02,
            sigma_theta: 0.01,
        };
        manhattan(300, 4, 0.6, 10, n, n, 17)
    }

    #[test]
    fn stages_run_in_order() {
        let d = dataset();
        let truth: BTreeMap<NodeId, Pose2D> = d.truth.iter().enumerate().map(|(i, p)| (i as NodeId, *p)).collect();
        let opts = PipelineOptions {
            track: Some(ReplayOptions {
                single_thread: true,
                ..Default::default()
            }),
            truth: Some(truth),
            timing: false,
        };
        let out = run_pipeline(d.to_graph(), &RunConfig::default(), &opts).unwrap();
        let names: Vec<&str> = out.reports.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(names, STAGES.to_vec());
        let last = out.reports.last().unwrap();
        assert!(last.nodes < out.baseline.node_count());
        assert!(last.npc.unwrap() <= 2.0);
        assert!(last.arps_pct.unwrap().is_finite());
        assert!(out.reports.iter().all(|r| r.elapsed_ms.is_none()));
    }

    #[test]
    fn reports_are_reproducible() {
        let run = || {
            let out = run_pipeline(dataset().to_graph(), &RunConfig::default(), &PipelineOptions::default()).unwrap();
            out.reports
                .iter()
                .map(|r| r.to_json_line())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(run(), run());
    }
}

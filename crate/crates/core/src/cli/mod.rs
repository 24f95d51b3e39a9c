//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a structured error, 2 on a usage error.
//! Reports go to standard output as JSON lines; the resolved configuration
//! and diagnostics go to the error stream.

pub mod pipeline;
pub mod replay;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backend::{degree_percentile, metric_arps, metric_t_rel, optimize, GridIndex, WeightMode};
use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::graph::{NodeId, PoseGraph};
use crate::io::{emit_svg, read_g2o, write_g2o, RunConfig, StageReport};
use crate::sim::{circle_laps, manhattan, Noise};

pub use pipeline::{run_pipeline, PipelineOptions, PipelineOutput};
pub use replay::{run_track_replay, DelaySchedule, ReplayOptions, ReplayStep};

#[derive(Debug, Parser)]
#[command(name = "pgslam", version, about = "2D pose-graph SLAM back-end")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the default run configuration.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Grid cell side in meters.
    #[arg(long, global = true)]
    pub cell_size: Option<f64>,
    /// Balance of the information and geometric weight terms, in [0, 1].
    #[arg(long, global = true)]
    pub s: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub weight_mode: Option<ModeArg>,
    /// Loop-candidate submap side in meters.
    #[arg(long, global = true)]
    pub submap: Option<f64>,
    /// Unregistered frames per temporal node.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub huber: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub deadline_ms: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run the back-end on the calling thread.
    #[arg(long, global = true)]
    pub single_thread: bool,
    /// Record wall-clock time per stage in the reports.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Node,
    Edge,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        macro_rules! set {
            ($($field:ident <- $arg:ident),*) => {
                $(if let Some(v) = self.$arg { c.$field = v; })*
            };
        }
        set!(cell_size <- cell_size, s <- s, submap_side <- submap, window <- window, huber_delta <- huber,
             max_iter <- max_iter, tol <- tol, deadline_ms <- deadline_ms, seed <- seed);
        if let Some(m) = self.weight_mode {
            c.weight_mode = match m {
                ModeArg::Node => WeightMode::NodeInfo,
                ModeArg::Edge => WeightMode::EdgeInfo,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct Outputs {
    /// Write the resulting graph in g2o format.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write an SVG plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Ground-truth poses in g2o format, matched by id.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Random walk on a unit grid.
    Manhattan,
    /// Repeated circular laps closing at the origin.
    Laps,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a dataset.
    Optimize {
        dataset: PathBuf,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Optimize, prune, sparsify and re-optimize a dataset.
    Prune {
        dataset: PathBuf,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Replay a dataset through the tracker and log every frame.
    Track {
        dataset: PathBuf,
        /// Synthetic solve times: zero, inf, alternate, random:<p> or a list.
        #[arg(long, default_value = "zero")]
        schedule: DelaySchedule,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Compare two graphs by shared node ids.
    Metrics {
        original: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Plot the trajectories of one or more datasets.
    Plot {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, required = true)]
        svg: PathBuf,
    },
    /// Run every stage, optionally starting with a tracker replay.
    Pipeline {
        dataset: PathBuf,
        #[arg(long)]
        track: bool,
        #[arg(long, default_value = "zero")]
        schedule: DelaySchedule,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Write a seeded synthetic dataset and its ground truth.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.02)]
        sigma_xy: f64,
        /// Heading noise in degrees.
        #[arg(long, default_value_t = 0.5)]
        sigma_theta_deg: f64,
        #[arg(long, required = true)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<PoseGraph> {
    read_g2o(path)?.to_graph()
}

fn load_truth(path: &Path) -> Result<BTreeMap<NodeId, Pose2D>> {
    Ok(read_g2o(path)?
        .vertices
        .into_iter()
        .map(|v| (v.id, Pose2D::new(v.x, v.y, v.theta)))
        .collect())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn trajectory(graph: &PoseGraph) -> Vec<Pose2D> {
    graph.nodes().map(|n| n.pose).collect()
}

fn emit(out: &mut dyn Write, reports: &[StageReport]) -> Result<()> {
    for r in reports {
        writeln!(out, "{}", r.to_json_line()).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        })?;
    }
    Ok(())
}

fn write_outputs(outputs: &Outputs, graph: &PoseGraph, plots: Vec<(String, Vec<Pose2D>)>) -> Result<()> {
    if let Some(p) = &outputs.out {
        write_file(p, &write_g2o(graph))?;
    }
    if let Some(p) = &outputs.svg {
        write_file(p, &emit_svg(&plots)?)?;
    }
    Ok(())
}

fn execute(cli: &Cli, config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let replay = |schedule: &DelaySchedule| ReplayOptions {
        schedule: schedule.clone(),
        single_thread: cli.config.single_thread,
        ..ReplayOptions::default()
    };
    match &cli.command {
        Command::Optimize { dataset, outputs } => {
            let mut g = load(dataset)?;
            let before = trajectory(&g);
            let o = optimize(&mut g, &config.optimizer())?;
            let mut r = StageReport::new("optimize", &g)
                .with("iterations", o.iterations)
                .with("initial_cost", o.initial_cost)
                .with("final_cost", o.final_cost);
            if let Some(t) = &outputs.truth {
                r.t_rel_m = Some(pipeline::t_rel_against(&g, &load_truth(t)?)?);
            }
            emit(out, &[r])?;
            write_outputs(
                outputs,
                &g,
                vec![("initial".into(), before), ("optimized".into(), trajectory(&g))],
            )
        }
        Command::Prune { dataset, outputs }
        | Command::Pipeline {
            dataset,
            outputs,
            track: false,
            ..
        } => run_stages(load(dataset)?, config, None, outputs, cli.config.timing, out),
        Command::Pipeline {
            dataset,
            outputs,
            track: true,
            schedule,
        } => run_stages(
            load(dataset)?,
            config,
            Some(replay(schedule)),
            outputs,
            cli.config.timing,
            out,
        ),
        Command::Track {
            dataset,
            schedule,
            outputs,
        } => {
            let g = load(dataset)?;
            let log = run_track_replay(&g, config, &replay(schedule))?;
            for s in &log {
                let line = serde_json::to_string(s).expect("replay step serializes");
                writeln!(out, "{line}").map_err(|source| Error::Io {
                    path: "<stdout>".into(),
                    source,
                })?;
            }
            let tracked: Vec<Pose2D> = log.iter().map(|s| s.pose()).collect();
            let mut r = StageReport::new("track", &g).with(
                "fallback_steps",
                log.iter()
                    .filter(|s| s.mode == crate::tracker::TrackMode::Fallback)
                    .count(),
            );
            if let Some(t) = &outputs.truth {
                let truth = load_truth(t)?;
                let gt: Vec<Pose2D> = log.iter().filter_map(|s| truth.get(&s.node).copied()).collect();
                r.t_rel_m = Some(metric_t_rel(&tracked, &gt)?);
            }
            emit(out, &[r])?;
            let mut tracked_graph = g.clone();
            for s in &log {
                tracked_graph.set_pose(s.node, s.pose())?;
            }
            write_outputs(
                outputs,
                &tracked_graph,
                vec![("input".into(), trajectory(&g)), ("tracked".into(), tracked)],
            )
        }
        Command::Metrics {
            original,
            candidate,
            truth,
        } => {
            let a = load(original)?;
            let b = load(candidate)?;
            let mut r = StageReport::new("metrics", &b)
                .with("nodes_before", a.node_count())
                .with("edges_before", a.edge_count())
                .with("degree_p90", degree_percentile(&b, 90.0));
            let grid = GridIndex::build(&b, config.cell_size);
            r.npc = Some(grid.npc());
            r = r.with("max_per_cell", grid.max_per_cell());
            r.arps_pct = Some(metric_arps(&a.poses(), &b.poses())?);
            if let Some(t) = truth {
                r.t_rel_m = Some(pipeline::t_rel_against(&b, &load_truth(t)?)?);
            }
            emit(out, &[r])
        }
        Command::Plot { datasets, svg } => {
            let mut plots = Vec::new();
            for d in datasets {
                let label = d
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                plots.push((label, trajectory(&load(d)?)));
            }
            write_file(svg, &emit_svg(&plots)?)
        }
        Command::Synth {
            kind,
            steps,
            sigma_xy,
            sigma_theta_deg,
            out: path,
            truth,
        } => {
            let odo = Noise {
                sigma_xy: *sigma_xy,
                sigma_theta: sigma_theta_deg.to_radians(),
            };
            let lc = Noise {
                sigma_xy: odo.sigma_xy * 0.5,
                sigma_theta: odo.sigma_theta * 0.2,
            };
            let d = match kind {
                SynthKind::Manhattan => manhattan(*steps, 10, 0.5, 10, odo, lc, config.seed),
                SynthKind::Laps => circle_laps(*steps, 50, 4.0, odo, lc, config.seed),
            };
            write_file(path, &d.to_record().to_text())?;
            if let Some(t) = truth {
                let mut rec = d.to_record();
                for (v, p) in rec.vertices.iter_mut().zip(&d.truth) {
                    (v.x, v.y, v.theta) = (p.x(), p.y(), p.theta());
                }
                write_file(t, &rec.to_text())?;
            }
            Ok(())
        }
    }
}

fn run_stages(
    graph: PoseGraph,
    config: &RunConfig,
    track: Option<ReplayOptions>,
    outputs: &Outputs,
    timing: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let truth = outputs.truth.as_deref().map(load_truth).transpose()?;
    let result = run_pipeline(graph, config, &PipelineOptions { track, truth, timing })?;
    emit(out, &result.reports)?;
    write_outputs(
        outputs,
        &result.result,
        vec![
            ("baseline".into(), trajectory(&result.baseline)),
            ("pruned".into(), trajectory(&result.result)),
        ],
    )
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let config = match cli.config.resolve() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let _ = writeln!(
        err,
        "config: {}",
        serde_json::to_string(&config).expect("config serializes")
    );
    if matches!(cli.command, Command::Pipeline { .. } | Command::Prune { .. }) {
        let stages: Vec<&str> = pipeline::STAGES
            .iter()
            .copied()
            .filter(|s| *s != "track" || matches!(cli.command, Command::Pipeline { track: true, .. }))
            .collect();
        let _ = writeln!(err, "stages: {}", stages.join(" -> "));
    }
    match execute(&cli, &config, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

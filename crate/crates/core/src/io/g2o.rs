//! g2o 2D text format: `VERTEX_SE2 id x y θ` and
//! `EDGE_SE2 from to dx dy dθ i11 i12 i13 i22 i23 i33`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;

use crate::backend::prune::propagate_chain_covariances;
use crate::error::{Error, Result};
use crate::geometry::{clamp_eigenvalues, min_eigenvalue, Covariance3, Pose2D};
use crate::graph::{Edge, EdgeKind, NodeId, NodeSource, PoseGraph};

/// Information eigenvalues below this are raised to it on ingest.
pub const INFO_EIGEN_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct VertexRecord {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    /// Upper triangle `i11 i12 i13 i22 i23 i33`.
    pub info: [f64; 6],
}

impl EdgeRecord {
    pub fn information(&self) -> Matrix3<f64> {
        let [a, b, c, d, e, f] = self.info;
        Matrix3::new(a, b, c, b, d, e, c, e, f)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetRecord {
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Ids named on `FIX` lines.
    pub fixed: Vec<NodeId>,
}

fn number<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid number '{tok}'"),
    })
}

fn expect_fields(tag: &str, fields: &[&str], n: usize, line: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Parse {
            line,
            message: format!("{tag} expects {n} values, found {}", fields.len()),
        });
    }
    Ok(())
}

pub fn parse_g2o(text: &str) -> Result<DatasetRecord> {
    let mut rec = DatasetRecord::default();
    let mut edge_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let fields: Vec<&str> = tokens.collect();
        match tag {
            "VERTEX_SE2" => {
                expect_fields(tag, &fields, 4, line)?;
                rec.vertices.push(VertexRecord {
                    id: number(fields[0], line)?,
                    x: number(fields[1], line)?,
                    y: number(fields[2], line)?,
                    theta: number(fields[3], line)?,
                });
            }
            "EDGE_SE2" => {
                expect_fields(tag, &fields, 11, line)?;
                let mut info = [0.0; 6];
                for (k, v) in info.iter_mut().enumerate() {
                    *v = number(fields[5 + k], line)?;
                }
                rec.edges.push(EdgeRecord {
                    from: number(fields[0], line)?,
                    to: number(fields[1], line)?,
                    dx: number(fields[2], line)?,
                    dy: number(fields[3], line)?,
                    dtheta: number(fields[4], line)?,
                    info,
                });
                edge_lines.push(line);
            }
            "FIX" => {
                for f in fields {
                    rec.fixed.push(number(f, line)?);
                }
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unsupported tag '{other}'"),
                })
            }
        }
    }
    let ids: BTreeSet<NodeId> = rec.vertices.iter().map(|v| v.id).collect();
    for (e, line) in rec.edges.iter().zip(edge_lines) {
        for id in [e.from, e.to] {
            if !ids.contains(&id) {
                return Err(Error::Parse {
                    line,
                    message: format!("edge references unknown node {id}"),
                });
            }
        }
    }
    Ok(rec)
}

pub fn read_g2o(path: &Path) -> Result<DatasetRecord> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_g2o(&text)
}

/// Information repaired to be positive semi-definite: eigenvalues under the
/// floor are raised to it.
pub fn repair_information(info: &Matrix3<f64>) -> (Matrix3<f64>, bool) {
    if min_eigenvalue(info) >= INFO_EIGEN_FLOOR {
        (*info, false)
    } else {
        (clamp_eigenvalues(info, INFO_EIGEN_FLOOR), true)
    }
}

impl DatasetRecord {
    /// Builds a pose graph. Edges between consecutive ids form the odometry
    /// chain; all others are loop closures. Node covariances are propagated
    /// along the chain from a zero covariance at the first node.
    pub fn to_graph(&self) -> Result<PoseGraph> {
        let mut g = PoseGraph::new();
        for v in &self.vertices {
            g.add_node_with_id(
                v.id,
                Pose2D::new(v.x, v.y, v.theta),
                Covariance3::zero(),
                NodeSource::Synthetic,
            )?;
        }
        let mut repaired = 0usize;
        for e in &self.edges {
            let (info, fixed) = repair_information(&e.information());
            repaired += usize::from(fixed);
            let consecutive = e.to == e.from + 1 || e.from == e.to + 1;
            let kind = if consecutive {
                EdgeKind::Odometry
            } else {
                EdgeKind::LoopLidar
            };
            g.add_edge(Edge::new(e.from, e.to, kind, Pose2D::new(e.dx, e.dy, e.dtheta), info))?;
        }
        if repaired > 0 {
            log::warn!("repaired {repaired} information matrices that were not positive definite");
        }
        propagate_chain_covariances(&mut g);
        Ok(g)
    }

    /// Record of the live part of a graph.
    pub fn from_graph(graph: &PoseGraph) -> Self {
        let vertices = graph
            .nodes()
            .map(|n| VertexRecord {
                id: n.id,
                x: n.pose.x(),
                y: n.pose.y(),
                theta: n.pose.theta(),
            })
            .collect();
        let edges = graph
            .edges()
            .map(|(_, e)| {
                let m = e.information;
                EdgeRecord {
                    from: e.from,
                    to: e.to,
                    dx: e.measurement.x(),
                    dy: e.measurement.y(),
                    dtheta: e.measurement.theta(),
                    info: [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]],
                }
            })
            .collect();
        Self {
            vertices,
            edges,
            fixed: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "VERTEX_SE2 {} {} {} {}", v.id, v.x, v.y, v.theta);
        }
        for e in &self.edges {
            let _ = write!(out, "EDGE_SE2 {} {} {} {} {}", e.from, e.to, e.dx, e.dy, e.dtheta);
            for v in e.info {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        for id in &self.fixed {
            let _ = writeln!(out, "FIX {id}");
        }
        out
    }
}

/// Live nodes and edges of `graph` in g2o text. Numbers use the shortest
/// representation that parses back to the identical value.
pub fn write_g2o(graph: &PoseGraph) -> String {
    DatasetRecord::from_graph(graph).to_text()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn parses_vertex_and_edge() {
        let r = parse_g2o("VERTEX_SE2 0 0 0 0").unwrap();
        assert_eq!(
            r.vertices,
            vec![VertexRecord {
                id: 0,
                x: 0.0,
                y: 0.0,
                theta: 0.0
            }]
        );
        let r = parse_g2o("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\n").unwrap();
        assert_eq!(r.edges.len(), 1);
        assert_eq!(r.edges[0].information(), Matrix3::identity());
        assert_eq!((r.edges[0].dx, r.edges[0].dy, r.edges[0].dtheta), (1.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_unsupported_tag_with_line() {
        let err = parse_g2o("# header\n\nVERTEX_SE3:QUAT 0 0 0 0 0 0 0 1").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("unsupported tag"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_g2o("VERTEX_SE2 0 1 2"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_g2o("VERTEX_SE2 0 1 x 0"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_g2o("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 9 1 0 0 1 0 0 1 0 1"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn comments_blank_lines_and_fix() {
        let r = parse_g2o("  # c\n\nVERTEX_SE2 3 1 2 0.5   # trailing\nFIX 3\n").unwrap();
        assert_eq!(r.vertices.len(), 1);
        assert_eq!(r.fixed, vec![3]);
    }

    #[test]
    fn write_examples() {
        assert_eq!(write_g2o(&PoseGraph::new()), "");
        let mut g = PoseGraph::new();
        let pose = Pose2D::new(1.5, -2.0, std::f64::consts::FRAC_PI_3);
        g.add_node(pose, Covariance3::zero(), NodeSource::Synthetic);
        let r = parse_g2o(&write_g2o(&g)).unwrap();
        assert_relative_eq!(r.vertices[0].theta, pose.theta(), epsilon = 1e-9);
        let b = g.add_node(Pose2D::identity(), Covariance3::zero(), NodeSource::Synthetic);
        g.prune_node(b).unwrap();
        assert_eq!(parse_g2o(&write_g2o(&g)).unwrap().vertices.len(), 1);
    }

    #[test]
    fn indefinite_information_is_repaired() {
        let m = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let (r, fixed) = repair_information(&m);
        assert!(fixed);
        assert!(min_eigenvalue(&r) >= INFO_EIGEN_FLOOR * 0.999);
        assert!(!repair_information(&Matrix3::identity()).1);
    }

    #[test]
    fn graph_kinds_from_ids() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nVERTEX_SE2 2 2 0 0\n\
                    EDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\nEDGE_SE2 1 2 1 0 0 1 0 0 1 0 1\nEDGE_SE2 0 2 2 0 0 1 0 0 1 0 1\n";
        let g = parse_g2o(text).unwrap().to_graph().unwrap();
        let kinds: Vec<EdgeKind> = g.edges().map(|(_, e)| e.kind).collect();
        assert_eq!(kinds, vec![EdgeKind::Odometry, EdgeKind::Odometry, EdgeKind::LoopLidar]);
        assert_eq!(*g.node(0).unwrap().cov.matrix(), Matrix3::zeros());
        assert!(g.node(2).unwrap().cov.trace() > g.node(1).unwrap().cov.trace());
    }

    fn arb_text() -> impl Strategy<Value = String> {
        let ws = prop::sample::select(vec![" ", "  ", "\t", " \t "]);
        let line = prop_oneof![
            (0u64..5, -1e3f64..1e3, -1e3f64..1e3, -3.0f64..3.0, ws.clone())
                .prop_map(|(i, x, y, t, w)| format!("VERTEX_SE2{w}{i}{w}{x}{w}{y}{w}{t}")),
            (0u64..5, 0u64..5, -10.0f64..10.0, ws.clone())
                .prop_map(|(a, b, d, w)| format!("EDGE_SE2{w}{a}{w}{b}{w}{d}{w}0{w}0{w}1{w}0{w}0{w}1{w}0{w}1")),
            Just("# comment".to_string()),
            Just(String::new()),
            "[A-Z_]{1,8}( [0-9]{1,3}){0,4}",
            "[ -~]{0,30}",
        ];
        prop::collection::vec((line, any::<bool>()), 0..12).prop_map(|lines| {
            lines
                .into_iter()
                .map(|(l, trailing)| if trailing { format!("{l}  # tail") } else { l })
                .collect::<Vec<_>>()
                .join("\n")
        })
    }

    proptest! {
        #[test]
        fn parser_is_total(text in arb_text()) {
            let _ = parse_g2o(&text);
        }

        #[test]
        fn parse_write_parse_fixed_point(
            verts in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4, -3.0f64..3.0), 1..10),
            info in (0.1f64..1e3, -1.0f64..1.0, 0.1f64..1e3, 0.1f64..1e4),
        ) {
            let mut text = String::new();
            for (i, (x, y, t)) in verts.iter().enumerate() {
                text += &format!("VERTEX_SE2 {i} {x} {y} {t}\n");
            }
            for i in 1..verts.len() {
                text += &format!("EDGE_SE2 {} {i} 1.25 -0.5 0.1 {} {} 0 {} 0 {}\n", i - 1, info.0, info.1, info.2, info.3);
            }
            let first = parse_g2o(&text).unwrap();
            let second = parse_g2o(&first.to_text()).unwrap();
            prop_assert_eq!(first.vertices.len(), second.vertices.len());
            for (a, b) in first.vertices.iter().zip(&second.vertices) {
                prop_assert!((a.x - b.x).abs() <= 1e-9 && (a.y - b.y).abs() <= 1e-9 && (a.theta - b.theta).abs() <= 1e-9);
            }
            for (a, b) in first.edges.iter().zip(&second.edges) {
                for k in 0..6 {
                    prop_assert!((a.info[k] - b.info[k]).abs() <= 1e-9);
                }
            }
        }
    }
}

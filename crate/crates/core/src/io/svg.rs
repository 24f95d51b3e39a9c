use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Pose2D;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 800.0;
const LEGEND_ROW: f64 = 18.0;

/// Standalone SVG 1.1 document with one polyline per trajectory and a
/// legend. World y points up; the view box fits all poses with a 5% margin.
pub fn emit_svg(trajectories: &[(String, Vec<Pose2D>)]) -> Result<String> {
    if trajectories.is_empty() {
        return Err(Error::EmptyTrajectory("no trajectories to plot".into()));
    }
    if let Some((label, _)) = trajectories.iter().find(|(_, p)| p.is_empty()) {
        return Err(Error::EmptyTrajectory(format!("trajectory '{label}' has no poses")));
    }
    let all = trajectories.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in all {
        x0 = x0.min(p.x());
        x1 = x1.max(p.x());
        y0 = y0.min(p.y());
        y1 = y1.max(p.y());
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let margin = 0.05 * span;
    let (vx, vy) = (x0 - margin, -y1 - margin);
    let (vw, vh) = (x1 - x0 + 2.0 * margin, y1 - y0 + 2.0 * margin);
    let (vw, vh) = (vw.max(2.0 * margin), vh.max(2.0 * margin));
    let height = WIDTH * vh / vw;
    let stroke = span / 400.0;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{height:.3}\" viewBox=\"{vx:.6} {vy:.6} {vw:.6} {vh:.6}\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{vx:.6}\" y=\"{vy:.6}\" width=\"{vw:.6}\" height=\"{vh:.6}\" fill=\"white\"/>"
    );
    for (i, (_, poses)) in trajectories.iter().enumerate() {
        let points: Vec<String> = poses.iter().map(|p| format!("{:.6},{:.6}", p.x(), -p.y())).collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"{stroke:.6}\" points=\"{}\"/>",
            color(i),
            points.join(" ")
        );
    }
    // legend in screen units, drawn over the plot
    let _ = writeln!(
        out,
        "<g transform=\"translate({vx:.6} {vy:.6}) scale({:.9})\" font-family=\"sans-serif\" font-size=\"12\">",
        vw / WIDTH
    );
    for (i, (label, _)) in trajectories.iter().enumerate() {
        let y = 10.0 + LEGEND_ROW * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"10\" y1=\"{y}\" x2=\"30\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"3\"/><text x=\"36\" y=\"{}\">{}</text>",
            color(i),
            y + 4.0,
            escape(label)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

fn color(i: usize) -> String {
    if i < PALETTE.len() {
        PALETTE[i].to_string()
    } else {
        // golden-angle hues keep later entries apart
        format!("hsl({:.1},70%,45%)", (i as f64 * 137.508) % 360.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

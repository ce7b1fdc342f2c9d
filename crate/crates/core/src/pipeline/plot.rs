//! Plot data for a single run: JSON for external tools and a self-contained SVG.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, RunResult, Scenario};
use crate::safety::{Barrier, BarrierKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRegion {
    pub name: String,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub scenario: String,
    pub seed: u64,
    pub workspace: PlotRegion,
    pub regions: Vec<PlotRegion>,
    pub barriers: Vec<Barrier<f64>>,
    /// Planar positions (first two state components).
    pub trajectory: Vec<[f64; 2]>,
    pub robustness: f64,
    pub satisfied: bool,
    pub safe: bool,
}

fn planar(v: &[f64]) -> [f64; 2] {
    [v[0], v.get(1).copied().unwrap_or(0.0)]
}

impl PlotData {
    pub fn new(result: &RunResult, sc: &Scenario) -> Self {
        let ws = &sc.config.workspace;
        Self {
            scenario: sc.name().to_string(),
            seed: result.seed,
            workspace: PlotRegion {
                name: "workspace".into(),
                lower: planar(&ws.lower),
                upper: planar(&ws.upper),
            },
            regions: sc
                .config
                .regions
                .iter()
                .map(|r| PlotRegion {
                    name: r.name.clone(),
                    lower: planar(&r.lower),
                    upper: planar(&r.upper),
                })
                .collect(),
            barriers: result.barriers.clone(),
            trajectory: result.trajectory.iter().map(|q| planar(q)).collect(),
            robustness: result.robustness,
            satisfied: result.satisfied,
            safe: result.safe,
        }
    }
}

const SIZE: f64 = 480.0;
const PAD: f64 = 20.0;

/// Renders regions, barrier disks and the trajectory; y points up.
pub fn render_svg(d: &PlotData) -> String {
    let [x0, y0] = d.workspace.lower;
    let [x1, y1] = d.workspace.upper;
    let s = (SIZE - 2.0 * PAD) / (x1 - x0).max(y1 - y0).max(1e-12);
    let px = |x: f64| PAD + (x - x0) * s;
    let py = |y: f64| SIZE - PAD - (y - y0) * s;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="black"/>"#,
        px(x0),
        py(y1),
        (x1 - x0) * s,
        (y1 - y0) * s
    );
    for r in &d.regions {
        let fill = if r.name.to_lowercase().starts_with("obs") { "#e57373" } else { "#81c784" };
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="0.5" stroke="gray"/>"#,
            px(r.lower[0]),
            py(r.upper[1]),
            (r.upper[0] - r.lower[0]) * s,
            (r.upper[1] - r.lower[1]) * s
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            px(0.5 * (r.lower[0] + r.upper[0])),
            py(0.5 * (r.lower[1] + r.upper[1])),
            r.name
        );
    }
    for b in &d.barriers {
        let (fill, dash) = match b.kind {
            BarrierKind::AvoidDisk => ("#424242\" fill-opacity=\"0.6", ""),
            BarrierKind::StayInDisk => ("none", r#" stroke-dasharray="4 3""#),
        };
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill}" stroke="black"{dash}/>"#,
            px(b.center[0]),
            py(b.center[1]),
            b.radius * s
        );
    }
    let pts: Vec<String> = d
        .trajectory
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1])))
        .collect();
    let color = if d.satisfied && d.safe { "#1565c0" } else { "#c62828" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        pts.join(" ")
    );
    if let Some(p) = d.trajectory.first() {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, px(p[0]), py(p[1]));
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="14" font-size="12">{} seed {} robustness {:.4}</text>"#,
        d.scenario, d.seed, d.robustness
    );
    out.push_str("</svg>\n");
    out
}

/// Writes the plot data as JSON and, optionally, an SVG rendering.
pub fn emit_plot_data(
    result: &RunResult,
    sc: &Scenario,
    json_path: &Path,
    svg_path: Option<&Path>,
) -> Result<PlotData, PipelineError> {
    let d = PlotData::new(result, sc);
    std::fs::write(json_path, serde_json::to_string_pretty(&d)? + "\n")?;
    if let Some(p) = svg_path {
        std::fs::write(p, render_svg(&d))?;
    }
    Ok(d)
}

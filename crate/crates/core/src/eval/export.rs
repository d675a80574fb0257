//! Report CSV and solution geometry export.

use std::fmt::Write as _;
use std::path::Path;

use crate::graph::{ProblemInstance, Solution};
use crate::{Error, Result};

use super::ReportLine;

pub const REPORT_HEADER: [&str; 12] = [
    "N", "method", "decoder", "s", "obj_avg", "obj_p10", "obj_p90", "gap_avg", "gap_p10", "gap_p90", "wins",
    "time_avg_s",
];

pub fn write_report_csv(lines: &[ReportLine], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    for l in lines {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportLine>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const SVG_SIZE: f64 = 500.0;
pub const SVG_MARGIN: f64 = 20.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Unit-square point to viewport pixels; `y` grows upwards in the plot.
pub fn to_viewport(p: [f64; 2]) -> (f64, f64) {
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    (SVG_MARGIN + p[0] * span, SVG_MARGIN + (1.0 - p[1]) * span)
}

/// SVG drawing of a solution: one colored polyline per route (depot to
/// depot), customer dots, and a square depot marker.
pub fn render_svg(inst: &ProblemInstance, sol: &Solution) -> Result<String> {
    let coord = |id: usize| {
        inst.coord_of(id)
            .ok_or_else(|| Error::invalid(format!("node {id} is not part of the instance")))
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        SVG_SIZE
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (r, route) in sol.routes().iter().enumerate() {
        let mut pts = Vec::with_capacity(route.len() + 2);
        for &id in std::iter::once(&0).chain(route.iter()).chain(std::iter::once(&0)) {
            let (x, y) = to_viewport(coord(id)?);
            pts.push(format!("{x:.2},{y:.2}"));
        }
        let _ = writeln!(
            s,
            r#"<polyline class="route" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            PALETTE[r % PALETTE.len()]
        );
    }
    for &id in &inst.node_ids()[1..] {
        let (x, y) = to_viewport(coord(id)?);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="black"/>"#);
    }
    let (x, y) = to_viewport(coord(0)?);
    let _ = writeln!(
        s,
        r#"<rect class="depot" x="{:.2}" y="{:.2}" width="10" height="10" fill="red"/>"#,
        x - 5.0,
        y - 5.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<stem>.svg` and `<stem>.csv` (route, seq, node_id, x, y).
pub fn export_geometry(inst: &ProblemInstance, sol: &Solution, stem: &Path) -> Result<()> {
    let svg_path = stem.with_extension("svg");
    std::fs::write(&svg_path, render_svg(inst, sol)?).map_err(|e| Error::io(&svg_path, e))?;
    let csv_path = stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["route", "seq", "node_id", "x", "y"])?;
    for (r, route) in sol.routes().iter().enumerate() {
        for (k, &id) in std::iter::once(&0).chain(route.iter()).chain(std::iter::once(&0)).enumerate() {
            let p = inst
                .coord_of(id)
                .ok_or_else(|| Error::invalid(format!("node {id} is not part of the instance")))?;
            w.write_record([r.to_string(), k.to_string(), id.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

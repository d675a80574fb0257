//! Evaluation protocol: gaps to a baseline, inter-percentile ranges, win
//! counts, the paired t-test, and report/geometry export.

mod export;
mod stats;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use export::{
    export_geometry, read_report_csv, render_svg, to_viewport, write_report_csv, REPORT_HEADER, SVG_MARGIN, SVG_SIZE,
};
pub use stats::{
    aggregate, gap_percent, ln_gamma, ln_reg_inc_beta, ln_student_t_cdf, paired_t_test, percentile_sorted,
    student_t_cdf, wins, Aggregate, TTest,
};

/// Objective of one method on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instance_id: String,
    /// Number of customers.
    pub n: usize,
    pub method: String,
    pub decoder: String,
    pub s: usize,
    pub objective: f64,
    pub wall_time_s: f64,
}

/// Aggregate line for one (N, method, decoder, s) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: String,
    pub decoder: String,
    pub s: usize,
    pub obj_avg: f64,
    pub obj_p10: f64,
    pub obj_p90: f64,
    pub gap_avg: f64,
    pub gap_p10: f64,
    pub gap_p90: f64,
    pub wins: usize,
    pub time_avg_s: f64,
}

/// Groups `rows` and compares each group with the rows of `baseline`
/// (matched by instance ID). Gaps are per-instance, then aggregated.
pub fn build_report(rows: &[EvalRow], baseline: &str) -> Result<Vec<ReportLine>> {
    let base: HashMap<&str, f64> = rows
        .iter()
        .filter(|r| r.method == baseline)
        .map(|r| (r.instance_id.as_str(), r.objective))
        .collect();
    let mut groups: BTreeMap<(usize, &str, &str, usize), Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.n, &r.method, &r.decoder, r.s)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((n, method, decoder, s), group) in groups {
        let objs: Vec<f64> = group.iter().map(|r| r.objective).collect();
        let paired: Vec<f64> = group
            .iter()
            .map(|r| {
                base.get(r.instance_id.as_str()).copied().ok_or_else(|| {
                    Error::invalid(format!("instance {} has no {baseline} result", r.instance_id))
                })
            })
            .collect::<Result<_>>()?;
        let gaps: Vec<f64> = objs.iter().zip(&paired).map(|(&z, &b)| gap_percent(z, b)).collect::<Result<_>>()?;
        let o = aggregate(&objs)?;
        let g = aggregate(&gaps)?;
        out.push(ReportLine {
            n,
            method: method.to_string(),
            decoder: decoder.to_string(),
            s,
            obj_avg: o.mean,
            obj_p10: o.p10,
            obj_p90: o.p90,
            gap_avg: g.mean,
            gap_p10: g.p10,
            gap_p90: g.p90,
            wins: wins(&objs, &paired)?,
            time_avg_s: group.iter().map(|r| r.wall_time_s).sum::<f64>() / group.len() as f64,
        });
    }
    Ok(out)
}

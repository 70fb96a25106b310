//! `report`: grouped means over a results CSV, without recomputation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;
use crate::run::{read_results, ResultRow, ALL_ROUNDS};

/// Plotting stand-in for an unbounded mini-batch.
pub const INF_BATCH_PLOT: f64 = 1000.0;

/// Mean metrics of all rows sharing a configuration and round label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub scheme: String,
    pub round: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "T_hours")]
    pub t_hours: f64,
    pub eps_km: Option<f64>,
    pub num: Option<usize>,
    pub dp_epsilon: Option<f64>,
    pub rows: usize,
    pub rmse: Option<f64>,
    pub emd_m: Option<f64>,
    pub diverged_frac: Option<f64>,
    pub centroid_dist_m: Option<f64>,
    pub dlg_iters: Option<f64>,
}

impl GroupSummary {
    fn same_group(&self, r: &ResultRow) -> bool {
        self.scheme == r.scheme
            && self.round == r.round
            && self.b == r.b
            && self.e == r.e
            && self.t_hours == r.t_hours
            && self.eps_km == r.eps_km
            && self.num == r.num
            && self.dp_epsilon == r.dp_epsilon
    }

    /// `B` on a numeric axis, with "inf" drawn at [`INF_BATCH_PLOT`].
    pub fn b_plot(&self) -> f64 {
        self.b.parse().unwrap_or(INF_BATCH_PLOT)
    }
}

fn mean_of(rows: &[&ResultRow], f: impl Fn(&ResultRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<GroupSummary> {
    let mut groups: Vec<(GroupSummary, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(g, _)| g.same_group(r)) {
            Some((_, members)) => members.push(r),
            None => groups.push((
                GroupSummary {
                    scheme: r.scheme.clone(),
                    round: r.round.clone(),
                    b: r.b.clone(),
                    e: r.e,
                    t_hours: r.t_hours,
                    eps_km: r.eps_km,
                    num: r.num,
                    dp_epsilon: r.dp_epsilon,
                    rows: 0,
                    rmse: None,
                    emd_m: None,
                    diverged_frac: None,
                    centroid_dist_m: None,
                    dlg_iters: None,
                },
                vec![r],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(g, m)| GroupSummary {
            rows: m.len(),
            rmse: mean_of(&m, |r| r.rmse),
            emd_m: mean_of(&m, |r| r.emd_m),
            diverged_frac: mean_of(&m, |r| r.diverged_frac),
            centroid_dist_m: mean_of(&m, |r| r.centroid_dist_m),
            dlg_iters: mean_of(&m, |r| r.dlg_iters),
            ..g
        })
        .collect()
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Fixed-width table of the whole-experiment groups.
pub fn render_table(groups: &[GroupSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>5} {:>3} {:>7} {:>7} {:>4} {:>6} {:>4} {:>8} {:>9} {:>8} {:>10} {:>9}",
        "scheme", "B", "E", "T_h", "eps_km", "num", "dp_eps", "n", "rmse", "emd_m", "div_%", "dist_m", "iters"
    );
    for g in groups.iter().filter(|g| g.round == ALL_ROUNDS) {
        let _ = writeln!(
            s,
            "{:<20} {:>5} {:>3} {:>7} {:>7} {:>4} {:>6} {:>4} {:>8} {:>9} {:>8} {:>10} {:>9}",
            g.scheme,
            g.b,
            g.e,
            g.t_hours,
            g.eps_km.map_or("-".into(), |v| v.to_string()),
            g.num.map_or("-".into(), |v| v.to_string()),
            g.dp_epsilon.map_or("-".into(), |v| v.to_string()),
            g.rows,
            cell(g.rmse, 3),
            cell(g.emd_m, 1),
            cell(g.diverged_frac.map(|d| 100.0 * d), 1),
            cell(g.centroid_dist_m, 1),
            cell(g.dlg_iters, 0),
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub groups: Vec<GroupSummary>,
    pub table: String,
    pub json: PathBuf,
    pub series: PathBuf,
}

/// Writes `report.json` (all groups) and `series.csv` (per-round groups with
/// a numeric `B_plot` column) into `out`.
pub fn cmd_report(results: &Path, out: &Path) -> Result<ReportOutput, CliError> {
    let rows = read_results(results)?;
    let groups = aggregate(&rows);
    fs::create_dir_all(out)?;
    let json = out.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(&groups).expect("json"))?;
    let series = out.join("series.csv");
    let mut w = csv::Writer::from_path(&series)?;
    w.write_record([
        "scheme",
        "B_plot",
        "E",
        "T_hours",
        "eps_km",
        "num",
        "dp_epsilon",
        "round",
        "rows",
        "rmse",
        "emd_m",
        "diverged_frac",
        "centroid_dist_m",
        "dlg_iters",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for g in groups.iter().filter(|g| g.round != ALL_ROUNDS) {
        w.write_record([
            g.scheme.clone(),
            g.b_plot().to_string(),
            g.e.to_string(),
            g.t_hours.to_string(),
            opt(g.eps_km),
            g.num.map_or(String::new(), |n| n.to_string()),
            opt(g.dp_epsilon),
            g.round.clone(),
            g.rows.to_string(),
            opt(g.rmse),
            opt(g.emd_m),
            opt(g.diverged_frac),
            opt(g.centroid_dist_m),
            opt(g.dlg_iters),
        ])?;
    }
    w.flush()?;
    let table = render_table(&groups);
    Ok(ReportOutput {
        groups,
        table,
        json,
        series,
    })
}

//! Output files: the `series.csv` time series, `summary.json`,
//! `inequalities.json` and `residual.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::RunStatus;
use crate::io::config::RunConfig;
use crate::monitors::{DecayBranch, MonitorFlag, MonitorSeries};
use crate::oracle::ViolationReport;

pub const SERIES_FILE: &str = "series.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INEQUALITIES_FILE: &str = "inequalities.json";
pub const RESIDUAL_FILE: &str = "residual.csv";

pub const SUMMARY_SCHEMA: &str = "gmcf.run-summary/1";
pub const INEQUALITIES_SCHEMA: &str = "gmcf.inequalities/1";

pub const SERIES_HEADER: &str =
    "time,min_omega,det_ratio_max,max_pair_product,min_s2_eig,max_A2,residual_linf";

/// Floats with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn series_csv(series: &MonitorSeries) -> String {
    let mut out = String::with_capacity(128 * (series.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for k in 0..series.len() {
        let cols = [
            series.times[k],
            series.min_omega[k],
            series.det_ratio_max[k],
            series.max_pair_product[k],
            series.min_s2_eig[k],
            series.max_a2[k],
        ];
        for v in cols {
            out.push_str(&fmt_float(v));
            out.push(',');
        }
        if let Some(r) = series.residual_linf[k] {
            out.push_str(&fmt_float(r));
        }
        out.push('\n');
    }
    out
}

/// Parses a `series.csv` file back into a series (flags and `sup_lambda` empty).
pub fn parse_series_csv(text: &str) -> Result<MonitorSeries> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::config("empty series file"))?;
    if header.trim() != SERIES_HEADER {
        return Err(Error::config(format!("unexpected series header `{header}`")));
    }
    let mut s = MonitorSeries::default();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::config(format!("series line {row}: expected 7 columns, got {}", cols.len())));
        }
        let num = |c: &str| -> Result<f64> {
            c.trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("series line {row}: `{c}`: {e}")))
        };
        s.times.push(num(cols[0])?);
        s.min_omega.push(num(cols[1])?);
        s.det_ratio_max.push(num(cols[2])?);
        s.max_pair_product.push(num(cols[3])?);
        s.min_s2_eig.push(num(cols[4])?);
        s.max_a2.push(num(cols[5])?);
        s.residual_linf.push(if cols[6].trim().is_empty() { None } else { Some(num(cols[6])?) });
    }
    Ok(s)
}

/// Decay-bound outcome as stored in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub applicable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<DecayBranch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub monotone: f64,
    pub area: f64,
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub status: RunStatus,
    pub success: bool,
    pub final_time: f64,
    pub steps: usize,
    pub snapshots: usize,
    pub max_dt: f64,
    pub final_sup_lambda: f64,
    pub min_min_omega: f64,
    /// Flags in a fixed order: `graph_condition`, `monotone_min_omega`,
    /// `area_decreasing_preserved`, `decay`.
    pub flags: Vec<MonitorFlag>,
    pub decay: DecaySummary,
    pub tolerances: Tolerances,
    pub config: RunConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalitiesSummary {
    pub schema: String,
    pub passed: bool,
    pub reports: Vec<ViolationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub level: usize,
    pub resolution: Vec<usize>,
    pub dt: f64,
    pub snapshot_time: f64,
    pub residual_linf: f64,
    /// `residual[level − 1] / residual[level]`.
    pub ratio: Option<f64>,
}

pub fn residual_csv(rows: &[ResidualRow]) -> String {
    let mut out = String::from("level,resolution,dt,snapshot_time,residual_linf,ratio\n");
    for r in rows {
        let res: Vec<String> = r.resolution.iter().map(|n| n.to_string()).collect();
        let _ = write!(
            out,
            "{},{},{},{},{},",
            r.level,
            res.join("x"),
            fmt_float(r.dt),
            fmt_float(r.snapshot_time),
            fmt_float(r.residual_linf)
        );
        if let Some(q) = r.ratio {
            out.push_str(&fmt_float(q));
        }
        out.push('\n');
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

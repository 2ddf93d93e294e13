//! CSV and JSON writers for trajectories, oracle tables and reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crp::{CycleLaw, CycleTrajectory};
use crate::error::{Error, Result};
use crate::experiments::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format '{s}' (csv or json)"))),
        }
    }
}

/// `key=value` pairs echoed at the top of every output.
pub type Header = Vec<(String, String)>;

fn ser_err(e: serde_json::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn comment_block(header: &Header) -> String {
    let mut s = format!("# crp-spectra {}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in header {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s
}

/// Sparse cycle-count rows, then one block-count row per checkpoint.
pub fn trajectory_csv(traj: &CycleTrajectory, header: &Header) -> String {
    let mut s = comment_block(header);
    s.push_str("checkpoint_t,size,j,count\n");
    for ((t, size), counts) in traj.checkpoints.iter().zip(&traj.sizes).zip(&traj.counts) {
        for (j, c) in counts.iter() {
            s.push_str(&format!("{t},{size},{j},{c}\n"));
        }
    }
    s.push_str("checkpoint_t,size,blocks\n");
    for ((t, size), k) in traj.checkpoints.iter().zip(&traj.sizes).zip(&traj.blocks) {
        s.push_str(&format!("{t},{size},{k}\n"));
    }
    s
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    tool: String,
    config: serde_json::Map<String, serde_json::Value>,
    data: &'a T,
}

/// Any serializable payload with the header as a `config` object.
pub fn tagged_json<T: Serialize>(data: &T, header: &Header) -> Result<String> {
    let config = header
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    let t = Tagged { tool: format!("crp-spectra {}", env!("CARGO_PKG_VERSION")), config, data };
    let mut s = serde_json::to_string_pretty(&t).map_err(ser_err)?;
    s.push('\n');
    Ok(s)
}

/// Exact law as one column per cycle length plus the probability.
pub fn law_csv(law: &CycleLaw, n: usize, header: &Header) -> String {
    let mut s = comment_block(header);
    let cols: Vec<String> = (1..=n).map(|j| format!("c_{j}")).collect();
    s.push_str(&format!("{},probability\n", cols.join(",")));
    for (counts, p) in law {
        let row: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("{},{p}\n", row.join(",")));
    }
    s
}

/// A covariance table `(row, col, value, abs_error)`.
pub fn table_csv(columns: &[&str], rows: &[Vec<String>], header: &Header) -> String {
    let mut s = comment_block(header);
    s.push_str(&columns.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// Report text in the given format. Empty reports are rejected.
pub fn report_string(report: &Report, format: Format) -> Result<String> {
    if report.records.is_empty() {
        return Err(Error::Serialization("report has no records".into()));
    }
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(ser_err)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut s = format!("# crp-spectra {}\n# name={}\n# config={}\n# pass={}\n",
                report.environment.version,
                report.name,
                serde_json::to_string(&report.config).map_err(ser_err)?,
                report.pass,
            );
            s.push_str("statistic,kind,observed,expected,std_error,tolerance_or_p,threshold,pass\n");
            for r in &report.records {
                let kind = serde_json::to_value(r.kind).map_err(ser_err)?;
                s.push_str(&format!(
                    "\"{}\",{},{},{},{},{},{},{}\n",
                    r.statistic.replace('"', "\"\""),
                    kind.as_str().unwrap_or_default(),
                    r.observed,
                    r.expected,
                    r.std_error.map(|v| v.to_string()).unwrap_or_default(),
                    r.tolerance_or_p,
                    r.threshold,
                    r.pass
                ));
            }
            Ok(s)
        }
    }
}

/// Write text to `path`, or to stdout when `path` is `None`.
pub fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn write_trajectory_csv(traj: &CycleTrajectory, header: &Header, path: &Path) -> Result<()> {
    emit(&trajectory_csv(traj, header), Some(path))
}

pub fn write_report(report: &Report, path: &Path, format: Format) -> Result<()> {
    emit(&report_string(report, format)?, Some(path))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(ser_err)
}

//! CSV and JSON result files.
//!
//! Numbers are written in shortest round-trip scientific notation, so a
//! file is a pure function of the values it holds.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::runner::{Summary, Table};

/// Statistic columns, after the swept-parameter columns.
pub const STAT_COLUMNS: [&str; 12] = [
    "run_count",
    "mean_lost_fraction",
    "sd_lost_fraction",
    "q50",
    "q95",
    "q99",
    "p_total_loss",
    "p_total_loss_ci_lo",
    "p_total_loss_ci_hi",
    "mean_cost_storage",
    "mean_cost_ingress",
    "mean_cost_egress",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
            other => Err(Error::validation("format", format!("unknown format `{other}`"))),
        }
    }
}

pub fn fmt_num(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_param(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Number(n) => fmt_num(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn stat_fields(s: &Summary) -> [String; 12] {
    [
        s.run_count.to_string(),
        fmt_num(s.mean_lost_fraction),
        fmt_num(s.sd_lost_fraction),
        fmt_num(s.q50),
        fmt_num(s.q95),
        fmt_num(s.q99),
        fmt_num(s.p_total_loss),
        fmt_num(s.p_total_loss_ci_lo),
        fmt_num(s.p_total_loss_ci_hi),
        fmt_num(s.mean_cost_storage),
        fmt_num(s.mean_cost_ingress),
        fmt_num(s.mean_cost_egress),
    ]
}

/// Renders a table as CSV text.
pub fn to_csv(table: &Table) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = table
        .columns
        .iter()
        .map(String::as_str)
        .chain(STAT_COLUMNS);
    w.write_record(header).map_err(|e| Error::Serde(e.to_string()))?;
    for row in &table.rows {
        if row.params.len() != table.columns.len() {
            return Err(Error::logic("row width does not match the header"));
        }
        let fields = row.params.iter().map(fmt_param).chain(stat_fields(&row.summary));
        w.write_record(fields).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

pub fn to_json(table: &Table) -> Result<String> {
    let mut s = serde_json::to_string_pretty(table).map_err(|e| Error::Serde(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<Table> {
    serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
}

/// Writes `table` to `path`.
pub fn write_results(table: &Table, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv(table)?,
        Format::Json => to_json(table)?,
    };
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

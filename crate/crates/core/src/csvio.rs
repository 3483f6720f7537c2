//! CSV serialization of results.
//!
//! Every writer emits `#`-prefixed header comments echoing the resolved
//! configuration (including the seed), then a header row and data rows.
//! Floats are written with 17 significant digits so files round-trip
//! bit-exactly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fullinfo::FullInfoGrid;
use crate::pricing::HedgeReport;
use crate::sim::{FilterPath, TruthPath};

/// 17-significant-digit float formatting (round-trips f64 exactly).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_comments(out: &mut String, comments: &[(String, String)]) {
    for (k, v) in comments {
        let _ = writeln!(out, "# {k} = {v}");
    }
}

/// A claim value surface as rows (t, v, h).
pub fn grid_to_csv(grid: &FullInfoGrid, comments: &[(String, String)]) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str("t,v,h\n");
    for (j, &t) in grid.t_nodes.iter().enumerate() {
        for (i, &v) in grid.v_nodes.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", fmt_f64(t), fmt_f64(v), fmt_f64(grid.values[j][i]));
        }
    }
    out
}

/// One simulated path: truth columns plus the filter outputs, with any
/// configured claim-price columns appended.
pub fn path_to_csv(
    truth: &TruthPath,
    filter_path: &FilterPath,
    comments: &[(String, String)],
) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str("t,V,Y,S,lambda,C,nuK,nuN");
    for (name, _) in &filter_path.prices {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for k in 0..truth.times.len() {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(truth.times[k]),
            fmt_f64(truth.v[k]),
            truth.y[k],
            fmt_f64(filter_path.s[k]),
            fmt_f64(filter_path.lambda[k]),
            fmt_f64(filter_path.c[k]),
            fmt_f64(filter_path.nu_k[k]),
            fmt_f64(filter_path.nu_n[k]),
        );
        for (_, series) in &filter_path.prices {
            let _ = write!(out, ",{}", fmt_f64(series[k]));
        }
        out.push('\n');
    }
    out
}

/// Filter density snapshots on a display grid: rows (t, x, pi).
pub fn density_to_csv(
    times: &[f64],
    xs: &[f64],
    densities: &[Vec<f64>],
    comments: &[(String, String)],
) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str("t,x,pi\n");
    for (j, &t) in times.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", fmt_f64(t), fmt_f64(x), fmt_f64(densities[j][i]));
        }
    }
    out
}

/// Hedge report: per-date ratios, cash and residual risks.
pub fn hedge_to_csv(
    report: &HedgeReport,
    instrument_names: &[String],
    comments: &[(String, String)],
) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str("date");
    for name in instrument_names {
        let _ = write!(out, ",theta_{name}");
    }
    out.push_str(",eta,residual_risk,residual_risk_out_of_sample\n");
    for j in 0..report.theta.len() {
        let _ = write!(out, "{}", fmt_f64(report.dates[j]));
        for k in 0..instrument_names.len() {
            let _ = write!(out, ",{}", fmt_f64(report.theta[j][k]));
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            fmt_f64(report.eta_mean[j]),
            fmt_f64(report.residual_risk[j]),
            fmt_f64(report.residual_risk_test[j]),
        );
    }
    out
}

/// A calibration quote row: (instrument_id, kind, maturity, price-or-spread).
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRow {
    pub id: String,
    pub kind: String,
    pub maturity: f64,
    pub value: f64,
}

/// Parse the calibration input CSV. Lines starting with `#` are comments;
/// the first non-comment line must be the header.
pub fn parse_quotes(text: &str) -> Result<Vec<QuoteRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["instrument_id", "kind", "maturity", "value"] {
                return Err(Error::InvalidParams(format!(
                    "line {}: expected header 'instrument_id,kind,maturity,value', got '{line}'",
                    lineno + 1
                )));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::InvalidParams(format!(
                "line {}: expected 4 fields, got {}",
                lineno + 1,
                cols.len()
            )));
        }
        let maturity: f64 = cols[2].parse().map_err(|_| {
            Error::InvalidParams(format!("line {}: bad maturity '{}'", lineno + 1, cols[2]))
        })?;
        let value: f64 = cols[3].parse().map_err(|_| {
            Error::InvalidParams(format!("line {}: bad value '{}'", lineno + 1, cols[3]))
        })?;
        rows.push(QuoteRow {
            id: cols[0].to_string(),
            kind: cols[1].to_ascii_lowercase(),
            maturity,
            value,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidParams("no quotes found in input".into()));
    }
    Ok(rows)
}

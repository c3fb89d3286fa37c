//! CSV and JSON writers.
//!
//! Numbers are printed with 12 significant digits so identical inputs give
//! byte-identical files. Angles leave this module in degrees.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::powerflow::{OperatingPoint, SolverConfig};
use crate::sensitivity::SensitivityMatrices;

/// Fixed scientific notation with 12 significant digits; `-0` prints as `0`.
pub fn format_number(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.11e}")
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Matrix as CSV with a header row of column labels and a label per row.
pub fn matrix_csv(
    corner: &str,
    rows: &[String],
    cols: &[String],
    m: &DMatrix<f64>,
    scale: f64,
) -> String {
    let mut out = String::new();
    out.push_str(&csv_field(corner));
    for c in cols {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for (i, label) in rows.iter().enumerate() {
        out.push_str(&csv_field(label));
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&format_number(m[(i, j)] * scale));
        }
        out.push('\n');
    }
    out
}

pub fn node_labels(net: &Network) -> Vec<String> {
    net.index.nodes().iter().map(|n| n.to_string()).collect()
}

/// SHA-256 over the voltage phasors and taps, hex encoded.
pub fn operating_point_hash(op: &OperatingPoint) -> String {
    let mut h = Sha256::new();
    for v in op.voltages.iter() {
        h.update(v.re.to_le_bytes());
        h.update(v.im.to_le_bytes());
    }
    for t in &op.taps {
        h.update(t.to_le_bytes());
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Output(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Output(format!("{}: {e}", dir.display())))
}

fn taps_json(net: &Network, taps: &[f64]) -> Value {
    Value::Object(
        net.model
            .regulators
            .iter()
            .zip(taps)
            .map(|(r, &t)| (r.id.clone(), json!(t)))
            .collect(),
    )
}

#[derive(Serialize)]
struct VoltageRow {
    node: String,
    magnitude_pu: f64,
    angle_deg: f64,
}

/// Metadata shared by every output bundle.
pub fn metadata(net: &Network, op: &OperatingPoint, solver: &SolverConfig) -> Value {
    json!({
        "nodes": node_labels(net),
        "regulators": net.model.regulator_ids(),
        "taps": taps_json(net, &op.taps),
        "iterations": op.iterations,
        "mismatch_pu": op.mismatch,
        "method": op.method,
        "tolerance_pu": solver.tolerance,
        "operating_point_sha256": operating_point_hash(op),
        "angle_unit": "deg",
    })
}

/// Node voltages as CSV: node, magnitude (p.u.), angle (deg).
pub fn voltages_csv(net: &Network, op: &OperatingPoint) -> String {
    let mut out = String::from("node,magnitude_pu,angle_deg\n");
    for (label, v) in node_labels(net).iter().zip(op.voltages.iter()) {
        let _ = writeln!(
            out,
            "{},{},{}",
            csv_field(label),
            format_number(v.norm()),
            format_number(v.arg().to_degrees())
        );
    }
    out
}

pub fn operating_point_json(net: &Network, op: &OperatingPoint, solver: &SolverConfig) -> Value {
    let rows: Vec<VoltageRow> = node_labels(net)
        .into_iter()
        .zip(op.voltages.iter())
        .map(|(node, v)| VoltageRow {
            node,
            magnitude_pu: v.norm(),
            angle_deg: v.arg().to_degrees(),
        })
        .collect();
    json!({ "metadata": metadata(net, op, solver), "voltages": rows })
}

fn is_angle(name: &str) -> bool {
    name.starts_with("dTheta")
}

fn matrix_rows(m: &DMatrix<f64>, scale: f64) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * scale).collect())
        .collect()
}

/// Writes `dE_dP.csv` … `dTheta_dGamma.csv`; returns the paths written.
pub fn write_sensitivity_csv(
    dir: &Path,
    net: &Network,
    sens: &SensitivityMatrices,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let nodes = node_labels(net);
    let regs = net.model.regulator_ids();
    let mut written = Vec::new();
    for (k, (name, m)) in sens.named().enumerate() {
        let cols = if k < 4 { &nodes } else { &regs };
        let scale = if is_angle(name) {
            180.0 / std::f64::consts::PI
        } else {
            1.0
        };
        let path = dir.join(format!("{name}.csv"));
        write_file(&path, &matrix_csv("node", &nodes, cols, m, scale))?;
        written.push(path);
    }
    Ok(written)
}

/// One JSON document with metadata, diagnostics and all six matrices.
pub fn sensitivity_json(
    net: &Network,
    op: &OperatingPoint,
    solver: &SolverConfig,
    sens: &SensitivityMatrices,
) -> Value {
    let matrices: serde_json::Map<String, Value> = sens
        .named()
        .map(|(name, m)| {
            let scale = if is_angle(name) {
                180.0 / std::f64::consts::PI
            } else {
                1.0
            };
            (name.to_string(), json!(matrix_rows(m, scale)))
        })
        .collect();
    json!({
        "metadata": metadata(net, op, solver),
        "diagnostics": sens.diagnostics,
        "matrices": matrices,
    })
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_have_twelve_significant_digits() {
        assert_eq!(format_number(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(format_number(-0.0), "0.00000000000e0");
        assert_eq!(format_number(-2.5e-7), "-2.50000000000e-7");
    }

    #[test]
    fn csv_layout_and_quoting() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let csv = matrix_csv(
            "node",
            &["x.a".into(), "odd,name.b".into()],
            &["r1".into()],
            &m,
            2.0,
        );
        assert_eq!(
            csv,
            "node,r1\nx.a,2.00000000000e0\n\"odd,name.b\",-4.00000000000e0\n"
        );
    }
}

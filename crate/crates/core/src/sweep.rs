//! Input sweeps with analytical slopes, for tangency plots.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::export::{csv_field, format_number};
use crate::netmodel::{Network, NodeId};
use crate::powerflow::{solve_power_flow, Injection, OperatingPoint, SolverConfig};
use crate::sensitivity::solve_all;

/// Tap positions at which slopes are sampled by default.
pub const TAP_SLOPE_SAMPLES: [f64; 7] = [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerKind {
    P,
    Q,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepTarget {
    Tap {
        regulator: usize,
    },
    /// Injection at a node, swept in kW or kvar.
    Power {
        node: usize,
        kind: PowerKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepRange {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad sweep range {start}:{stop}:{step}"
            )));
        }
        Ok(SweepRange { start, stop, step })
    }

    /// Parses `start:stop:step`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::InvalidArgument(format!("sweep range `{s}` is not start:stop:step"))
            })?;
        match parts[..] {
            [a, b, c] => SweepRange::new(a, b, c),
            _ => Err(Error::InvalidArgument(format!(
                "sweep range `{s}` is not start:stop:step"
            ))),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }
}

/// One row of a sweep: per-node magnitude (p.u.) and angle (deg), or their
/// slopes per unit of input.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub input: f64,
    pub magnitude: Vec<f64>,
    pub angle_deg: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    /// `tap:<id>`, `p:<node>` or `q:<node>`.
    pub target: String,
    /// Unit of the input column.
    pub unit: String,
    pub nodes: Vec<String>,
    pub series: Vec<SweepRow>,
    pub slopes: Vec<SweepRow>,
}

pub fn resolve_target(
    net: &Network,
    regulator: Option<&str>,
    node: Option<&str>,
    kind: PowerKind,
) -> Result<SweepTarget> {
    match (regulator, node) {
        (Some(id), None) => Ok(SweepTarget::Tap {
            regulator: net
                .model
                .regulator_position(id)
                .ok_or_else(|| Error::UnknownRegulator(id.to_string()))?,
        }),
        (None, Some(node)) => {
            let id: NodeId = node.parse()?;
            let idx = net.index.require(&id)?;
            if net.index.is_slack(idx) {
                return Err(Error::InvalidArgument(format!("node {id} is a slack node")));
            }
            Ok(SweepTarget::Power { node: idx, kind })
        }
        _ => Err(Error::InvalidArgument(
            "give exactly one of a regulator or a node".into(),
        )),
    }
}

fn row_from_op(input: f64, op: &OperatingPoint) -> SweepRow {
    SweepRow {
        input,
        magnitude: op.voltages.iter().map(|v| v.norm()).collect(),
        angle_deg: op.voltages.iter().map(|v| v.arg().to_degrees()).collect(),
    }
}

/// Runs the sweep. Slopes are taken at `slope_at` for tap sweeps and at
/// every series point for power sweeps.
pub fn run_sweep(
    net: &Network,
    base_taps: &[f64],
    target: &SweepTarget,
    range: SweepRange,
    slope_at: &[f64],
    solver: &SolverConfig,
) -> Result<SweepResult> {
    net.check_taps(base_taps)?;
    let kva = net.model.s_base_va / 1e3;
    let solve_at = |x: f64, warm: Option<&OperatingPoint>| -> Result<OperatingPoint> {
        let mut config = solver.clone();
        if let Some(w) = warm {
            config = config.warm(&w.voltages);
        }
        match target {
            SweepTarget::Tap { regulator } => {
                let mut taps = base_taps.to_vec();
                taps[*regulator] = x;
                solve_power_flow(net, &taps, &config, None)
            }
            SweepTarget::Power { node, kind } => {
                let s = match kind {
                    PowerKind::P => Complex64::new(x / kva, 0.0),
                    PowerKind::Q => Complex64::new(0.0, x / kva),
                };
                solve_power_flow(net, base_taps, &config, Some(Injection { node: *node, s }))
            }
        }
    };
    let slope_row = |x: f64, op: &OperatingPoint| -> Result<SweepRow> {
        let sens = solve_all(net, op)?;
        let (de, dt, col, per_input) = match target {
            SweepTarget::Tap { regulator } => {
                (&sens.de_dgamma, &sens.dtheta_dgamma, *regulator, 1.0)
            }
            SweepTarget::Power {
                node,
                kind: PowerKind::P,
            } => (&sens.de_dp, &sens.dtheta_dp, *node, 1.0 / kva),
            SweepTarget::Power {
                node,
                kind: PowerKind::Q,
            } => (&sens.de_dq, &sens.dtheta_dq, *node, 1.0 / kva),
        };
        Ok(SweepRow {
            input: x,
            magnitude: de.column(col).iter().map(|v| v * per_input).collect(),
            angle_deg: dt
                .column(col)
                .iter()
                .map(|v| (v * per_input).to_degrees())
                .collect(),
        })
    };

    let mut series = Vec::new();
    let mut last: Option<OperatingPoint> = None;
    for x in range.values() {
        let op = solve_at(x, last.as_ref())?;
        series.push(row_from_op(x, &op));
        last = Some(op);
    }
    let mut slopes = Vec::new();
    let points: Vec<f64> = match target {
        SweepTarget::Tap { .. } => slope_at.to_vec(),
        SweepTarget::Power { .. } => range.values(),
    };
    for x in points {
        slopes.push(slope_row(x, &solve_at(x, None)?)?);
    }
    let (label, unit) = match target {
        SweepTarget::Tap { regulator } => (
            format!("tap:{}", net.model.regulators[*regulator].id),
            "tap",
        ),
        SweepTarget::Power {
            node,
            kind: PowerKind::P,
        } => (format!("p:{}", net.index.node(*node)), "kW"),
        SweepTarget::Power {
            node,
            kind: PowerKind::Q,
        } => (format!("q:{}", net.index.node(*node)), "kvar"),
    };
    Ok(SweepResult {
        target: label,
        unit: unit.to_string(),
        nodes: net.index.nodes().iter().map(|n| n.to_string()).collect(),
        series,
        slopes,
    })
}

/// Wide CSV: `kind,input,E:<node>...,theta_deg:<node>...`; `kind` is
/// `series` or `slope`.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("kind,input");
    for n in &result.nodes {
        let _ = write!(out, ",{}", csv_field(&format!("E:{n}")));
    }
    for n in &result.nodes {
        let _ = write!(out, ",{}", csv_field(&format!("theta_deg:{n}")));
    }
    out.push('\n');
    for (kind, rows) in [("series", &result.series), ("slope", &result.slopes)] {
        for row in rows {
            out.push_str(kind);
            out.push(',');
            out.push_str(&format_number(row.input));
            for v in row.magnitude.iter().chain(&row.angle_deg) {
                out.push(',');
                out.push_str(&format_number(*v));
            }
            out.push('\n');
        }
    }
    out
}

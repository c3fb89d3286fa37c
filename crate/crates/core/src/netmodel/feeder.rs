//! Feeder description files.
//!
//! Physical units are converted to per-unit once, here. The power base is per
//! phase; each bus carries its own line-to-neutral voltage base. See
//! `schema/feeder.schema.json` for the full layout.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Deserialize;

use super::assembly::{delta_wye_primitive, two_port_primitive};
use super::{
    BranchElement, BranchKind, Bus, NetworkModel, NodeId, PhaseId, RegulatorAttachment, SlackBus,
};
use crate::composite::{CompositeBus, DeltaPair, Der1Phase, Der3Phase, VoltVarCurve};
use crate::error::{Error, Result};
use crate::regulator::{
    RegulatorKind, RegulatorModel, TapSide, DEFAULT_DELTA_K, DEFAULT_TAP_MAX, DEFAULT_TAP_MIN,
};

/// Series impedance (p.u.) used for switches that declare none.
const SWITCH_IMPEDANCE: Complex64 = Complex64 { re: 1e-4, im: 1e-4 };

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub bases: Bases,
    pub buses: Vec<BusSpec>,
    #[serde(default)]
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub transformers: Vec<TransformerSpec>,
    #[serde(default)]
    pub regulators: Vec<RegulatorSpec>,
    #[serde(default)]
    pub capacitors: Vec<CapacitorSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub ders: Vec<DerSpec>,
    pub slack: Vec<SlackSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    /// Per-phase power base.
    pub s_base_kva: f64,
    /// Default line-to-neutral voltage base for buses that omit one.
    #[serde(default)]
    pub kv_ln: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub name: String,
    pub phases: Vec<PhaseId>,
    #[serde(default)]
    pub kv_ln: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Line,
    Switch,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub id: String,
    #[serde(default = "default_line_kind")]
    pub kind: LineKind,
    pub from: String,
    pub to: String,
    pub phases: Vec<PhaseId>,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Series resistance, ohm per unit length.
    #[serde(default)]
    pub r: Option<Vec<Vec<f64>>>,
    /// Series reactance, ohm per unit length.
    #[serde(default)]
    pub x: Option<Vec<Vec<f64>>>,
    /// Shunt susceptance, microsiemens per unit length.
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
}

fn default_line_kind() -> LineKind {
    LineKind::Line
}

fn default_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TransformerConnection {
    WyeWye,
    DeltaWye,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub id: String,
    pub connection: TransformerConnection,
    pub from: String,
    pub to: String,
    pub phases: Vec<PhaseId>,
    /// Total rating over all phases.
    pub kva: f64,
    pub r_pct: f64,
    pub x_pct: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RegulatorType {
    OnePhaseFrom,
    OnePhaseTo,
    ThreePhaseWyeWye,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSpec {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: RegulatorType,
    pub from: String,
    pub to: String,
    pub phases: Vec<PhaseId>,
    /// Short-circuit admittance `[re, im]` in p.u.
    pub y_t: [f64; 2],
    #[serde(default)]
    pub delta_k: Option<f64>,
    #[serde(default)]
    pub tap_min: Option<i32>,
    #[serde(default)]
    pub tap_max: Option<i32>,
    #[serde(default)]
    pub tap: i32,
    #[serde(default)]
    pub tap_side: Option<TapSide>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorSpec {
    pub id: String,
    pub bus: String,
    pub phases: Vec<PhaseId>,
    /// Rating per phase at nominal voltage.
    pub kvar: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LoadConnection {
    Wye,
    Delta,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub bus: String,
    pub connection: LoadConnection,
    /// Phase (wye) or phase pair (delta) to `[kW, kvar]`.
    pub powers: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DerKind {
    OnePhase,
    ThreePhase,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerSpec {
    pub id: String,
    pub bus: String,
    pub kind: DerKind,
    #[serde(default)]
    pub phase: Option<PhaseId>,
    /// Active output; the total over all phases for three-phase units.
    pub kw: f64,
    /// Fixed reactive output added to the volt-var term.
    #[serde(default)]
    pub kvar: f64,
    /// Volt-var slope in p.u. reactive power per p.u. voltage.
    #[serde(default)]
    pub droop: f64,
    #[serde(default = "default_v_ref")]
    pub v_ref: f64,
    #[serde(default)]
    pub band: Option<[f64; 2]>,
}

fn default_v_ref() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackSpec {
    pub bus: String,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default)]
    pub angle_deg: f64,
    /// Per-phase overrides `[magnitude p.u., angle deg]`.
    #[serde(default)]
    pub voltages: BTreeMap<PhaseId, [f64; 2]>,
}

fn default_magnitude() -> f64 {
    1.0
}

/// Reads and validates a feeder file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_feeder(&text)
}

/// Parses and validates feeder JSON text.
pub fn parse_feeder(text: &str) -> Result<NetworkModel> {
    let file: FeederFile = serde_json::from_str(text)?;
    let model = build_model(&file)?;
    model.validate()?;
    Ok(model)
}

struct Builder<'a> {
    file: &'a FeederFile,
    s_base_kva: f64,
}

impl Builder<'_> {
    fn bus(&self, name: &str) -> Result<&BusSpec> {
        self.file
            .buses
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Model(format!("unknown bus `{name}`")))
    }

    fn kv_ln(&self, name: &str) -> Result<f64> {
        let bus = self.bus(name)?;
        bus.kv_ln
            .or(self.file.bases.kv_ln)
            .ok_or_else(|| Error::Model(format!("bus `{name}` has no voltage base")))
    }

    fn z_base(&self, name: &str) -> Result<f64> {
        let v = self.kv_ln(name)? * 1e3;
        Ok(v * v / (self.s_base_kva * 1e3))
    }

    fn nodes(&self, bus: &str, phases: &[PhaseId]) -> Result<Vec<NodeId>> {
        let spec = self.bus(bus)?;
        phases
            .iter()
            .map(|&p| {
                if spec.phases.contains(&p) {
                    Ok(NodeId::new(bus, p))
                } else {
                    Err(Error::UnknownNode(NodeId::new(bus, p).to_string()))
                }
            })
            .collect()
    }

    fn pu_power(&self, kw: f64, kvar: f64) -> Complex64 {
        Complex64::new(kw, kvar) / self.s_base_kva
    }
}

fn check_phase_list(owner: &str, phases: &[PhaseId]) -> Result<Vec<PhaseId>> {
    let mut sorted = phases.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != phases.len() {
        return Err(Error::Model(format!("`{owner}` repeats a phase")));
    }
    if sorted.is_empty() {
        return Err(Error::Model(format!("`{owner}` lists no phases")));
    }
    Ok(sorted)
}

fn square(owner: &str, what: &str, m: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::DimensionMismatch {
            element: format!("{owner} ({what})"),
            expected: n,
            actual: m.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |r, c| m[r][c]))
}

fn invert(owner: &str, z: DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    z.try_inverse()
        .ok_or_else(|| Error::Model(format!("series impedance of `{owner}` is singular")))
}

fn line_element(b: &Builder<'_>, spec: &LineSpec) -> Result<BranchElement> {
    let phases = check_phase_list(&spec.id, &spec.phases)?;
    let n = phases.len();
    let z_base = b.z_base(&spec.from)?;
    let z_to = b.z_base(&spec.to)?;
    if ((z_base - z_to) / z_base).abs() > 1e-9 {
        return Err(Error::Model(format!(
            "line `{}` joins buses with different voltage bases",
            spec.id
        )));
    }
    if !(spec.length > 0.0) {
        return Err(Error::Model(format!(
            "line `{}` has non-positive length",
            spec.id
        )));
    }
    let z = match (&spec.r, &spec.x, spec.kind) {
        (Some(r), Some(x), _) => {
            let r = square(&spec.id, "r", r, n)?;
            let x = square(&spec.id, "x", x, n)?;
            DMatrix::from_fn(n, n, |i, j| {
                Complex64::new(r[(i, j)], x[(i, j)]) * spec.length / z_base
            })
        }
        (None, None, LineKind::Switch) => DMatrix::from_diagonal_element(n, n, SWITCH_IMPEDANCE),
        _ => {
            return Err(Error::Model(format!(
                "line `{}` needs both `r` and `x` matrices",
                spec.id
            )))
        }
    };
    let y_series = invert(&spec.id, z)?;
    let y_shunt_half = match &spec.b {
        Some(bm) => {
            let bm = square(&spec.id, "b", bm, n)?;
            DMatrix::from_fn(n, n, |i, j| {
                Complex64::new(0.0, bm[(i, j)] * 1e-6 * spec.length * z_base / 2.0)
            })
        }
        None => DMatrix::zeros(n, n),
    };
    Ok(BranchElement {
        id: spec.id.clone(),
        kind: match spec.kind {
            LineKind::Line => BranchKind::Line,
            LineKind::Switch => BranchKind::Switch,
        },
        from: b.nodes(&spec.from, &phases)?,
        to: b.nodes(&spec.to, &phases)?,
        primitive: two_port_primitive(&y_series, &y_shunt_half),
    })
}

fn transformer_element(b: &Builder<'_>, spec: &TransformerSpec) -> Result<BranchElement> {
    let phases = check_phase_list(&spec.id, &spec.phases)?;
    let n = phases.len();
    if !(spec.kva > 0.0) {
        return Err(Error::Model(format!(
            "transformer `{}` needs a positive rating",
            spec.id
        )));
    }
    let z_own = Complex64::new(spec.r_pct, spec.x_pct) / 100.0;
    if z_own.norm() == 0.0 {
        return Err(Error::Model(format!(
            "transformer `{}` has zero impedance",
            spec.id
        )));
    }
    let z = z_own * (b.s_base_kva / (spec.kva / n as f64));
    let y = 1.0 / z;
    let primitive = match spec.connection {
        TransformerConnection::WyeWye => two_port_primitive(
            &DMatrix::from_diagonal_element(n, n, y),
            &DMatrix::zeros(n, n),
        ),
        TransformerConnection::DeltaWye => {
            if n != 3 {
                return Err(Error::Model(format!(
                    "delta-wye transformer `{}` must connect all three phases",
                    spec.id
                )));
            }
            delta_wye_primitive(y)
        }
    };
    Ok(BranchElement {
        id: spec.id.clone(),
        kind: BranchKind::Transformer,
        from: b.nodes(&spec.from, &phases)?,
        to: b.nodes(&spec.to, &phases)?,
        primitive,
    })
}

fn capacitor_element(b: &Builder<'_>, spec: &CapacitorSpec) -> Result<BranchElement> {
    let phases = check_phase_list(&spec.id, &spec.phases)?;
    let y = Complex64::new(0.0, spec.kvar / b.s_base_kva);
    Ok(BranchElement {
        id: spec.id.clone(),
        kind: BranchKind::Capacitor,
        from: b.nodes(&spec.bus, &phases)?,
        to: Vec::new(),
        primitive: DMatrix::from_diagonal_element(phases.len(), phases.len(), y),
    })
}

fn regulator_attachment(b: &Builder<'_>, spec: &RegulatorSpec) -> Result<RegulatorAttachment> {
    let phases = check_phase_list(&spec.id, &spec.phases)?;
    let kind = match (spec.kind, spec.tap_side) {
        (RegulatorType::ThreePhaseWyeWye, side) => RegulatorKind::ThreePhaseWyeWye {
            tap_side: side.unwrap_or(TapSide::To),
        },
        (RegulatorType::OnePhaseFrom, None | Some(TapSide::From)) => RegulatorKind::OnePhaseFrom,
        (RegulatorType::OnePhaseTo, None | Some(TapSide::To)) => RegulatorKind::OnePhaseTo,
        _ => {
            return Err(Error::Model(format!(
                "regulator `{}` has a tap side that contradicts its type",
                spec.id
            )))
        }
    };
    if phases.len() != kind.phase_count() {
        return Err(Error::Model(format!(
            "regulator `{}` of this type needs {} phase(s), got {}",
            spec.id,
            kind.phase_count(),
            phases.len()
        )));
    }
    let model = RegulatorModel::new(
        kind,
        Complex64::new(spec.y_t[0], spec.y_t[1]),
        spec.delta_k.unwrap_or(DEFAULT_DELTA_K),
        spec.tap_min.unwrap_or(DEFAULT_TAP_MIN),
        spec.tap_max.unwrap_or(DEFAULT_TAP_MAX),
    )
    .map_err(|e| Error::Model(format!("regulator `{}`: {e}", spec.id)))?;
    Ok(RegulatorAttachment {
        id: spec.id.clone(),
        model,
        from: b.nodes(&spec.from, &phases)?,
        to: b.nodes(&spec.to, &phases)?,
        tap: spec.tap,
    })
}

fn attach_load(b: &Builder<'_>, spec: &LoadSpec, composite: &mut CompositeBus) -> Result<()> {
    let owner = spec.id.as_deref().unwrap_or(&spec.bus);
    for (key, &[kw, kvar]) in &spec.powers {
        let s = b.pu_power(kw, kvar);
        match spec.connection {
            LoadConnection::Wye => {
                let phase = PhaseId::parse(key).ok_or_else(|| {
                    Error::Model(format!("wye load `{owner}` has bad phase key `{key}`"))
                })?;
                composite.add_wye(phase, s);
            }
            LoadConnection::Delta => {
                let pair = DeltaPair::parse(key).ok_or_else(|| {
                    Error::Model(format!("delta load `{owner}` has bad pair key `{key}`"))
                })?;
                composite.add_delta(pair, s);
            }
        }
    }
    Ok(())
}

fn attach_der(
    b: &Builder<'_>,
    spec: &DerSpec,
    bus: &BusSpec,
    composite: &mut CompositeBus,
) -> Result<()> {
    let mut curve = VoltVarCurve::new(spec.droop, spec.v_ref);
    if let Some([lo, hi]) = spec.band {
        curve.v_min = lo;
        curve.v_max = hi;
    }
    curve
        .validate()
        .map_err(|e| Error::Model(format!("DER `{}`: {e}", spec.id)))?;
    let p = spec.kw / b.s_base_kva;
    let q = spec.kvar / b.s_base_kva;
    match spec.kind {
        DerKind::OnePhase => {
            let phase = spec.phase.ok_or_else(|| {
                Error::Model(format!("single-phase DER `{}` needs a phase", spec.id))
            })?;
            if !bus.phases.contains(&phase) {
                return Err(Error::UnknownNode(
                    NodeId::new(&bus.name, phase).to_string(),
                ));
            }
            composite.ders_1ph.push(Der1Phase { phase, p, q, curve });
        }
        DerKind::ThreePhase => {
            if spec.phase.is_some() {
                return Err(Error::Model(format!(
                    "three-phase DER `{}` takes no phase",
                    spec.id
                )));
            }
            if bus.phases.len() != 3 {
                return Err(Error::Model(format!(
                    "three-phase DER `{}` sits on bus `{}` with {} phase(s)",
                    spec.id,
                    bus.name,
                    bus.phases.len()
                )));
            }
            if composite.der_3ph.is_some() {
                return Err(Error::Model(format!(
                    "bus `{}` already hosts a three-phase DER",
                    bus.name
                )));
            }
            composite.der_3ph = Some(Der3Phase { p, q, curve });
        }
    }
    Ok(())
}

fn slack_bus(spec: &SlackSpec) -> Result<SlackBus> {
    let mut slack = SlackBus::balanced(&spec.bus, spec.magnitude, spec.angle_deg);
    for (&phase, &[mag, deg]) in &spec.voltages {
        if !(mag > 0.0) {
            return Err(Error::Model(format!(
                "slack `{}` has non-positive magnitude",
                spec.bus
            )));
        }
        slack.voltages[phase.index()] = Complex64::from_polar(mag, deg.to_radians());
    }
    Ok(slack)
}

fn build_model(file: &FeederFile) -> Result<NetworkModel> {
    if !(file.bases.s_base_kva > 0.0) {
        return Err(Error::Model("s_base_kva must be positive".into()));
    }
    let b = Builder {
        file,
        s_base_kva: file.bases.s_base_kva,
    };
    let mut buses = Vec::with_capacity(file.buses.len());
    for spec in &file.buses {
        let phases = if spec.phases.is_empty() {
            return Err(Error::EmptyPhaseSet(spec.name.clone()));
        } else {
            check_phase_list(&spec.name, &spec.phases)?
        };
        buses.push(Bus {
            name: spec.name.clone(),
            phases,
            kv_ln: b.kv_ln(&spec.name)?,
            composite: CompositeBus::default(),
        });
    }
    let mut branches = Vec::new();
    for spec in &file.lines {
        branches.push(line_element(&b, spec)?);
    }
    for spec in &file.transformers {
        branches.push(transformer_element(&b, spec)?);
    }
    for spec in &file.capacitors {
        branches.push(capacitor_element(&b, spec)?);
    }
    let regulators = file
        .regulators
        .iter()
        .map(|spec| regulator_attachment(&b, spec))
        .collect::<Result<Vec<_>>>()?;
    for spec in &file.loads {
        let pos = file
            .buses
            .iter()
            .position(|x| x.name == spec.bus)
            .ok_or_else(|| Error::Model(format!("load on unknown bus `{}`", spec.bus)))?;
        attach_load(&b, spec, &mut buses[pos].composite)?;
    }
    for spec in &file.ders {
        let pos = file
            .buses
            .iter()
            .position(|x| x.name == spec.bus)
            .ok_or_else(|| {
                Error::Model(format!("DER `{}` on unknown bus `{}`", spec.id, spec.bus))
            })?;
        attach_der(&b, spec, &file.buses[pos], &mut buses[pos].composite)?;
    }
    let slack = file
        .slack
        .iter()
        .map(slack_bus)
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkModel {
        s_base_va: file.bases.s_base_kva * 1e3,
        buses,
        branches,
        regulators,
        slack,
    })
}

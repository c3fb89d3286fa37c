//! Network data model, node indexing and admittance assembly.

mod assembly;
pub mod feeder;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use assembly::{
    assemble_d_delta_y, assemble_delta_y, assemble_y, assemble_y_nominal, delta_wye_primitive,
    stamp, two_port_primitive,
};
pub use feeder::{load_feeder, parse_feeder};

use crate::composite::CompositeBus;
use crate::error::{Error, Result};
use crate::regulator::RegulatorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseId {
    A,
    B,
    C,
}

impl PhaseId {
    pub const ALL: [PhaseId; 3] = [PhaseId::A, PhaseId::B, PhaseId::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            PhaseId::A => 'a',
            PhaseId::B => 'b',
            PhaseId::C => 'c',
        }
    }

    pub fn parse(s: &str) -> Option<PhaseId> {
        match s {
            "a" | "A" => Some(PhaseId::A),
            "b" | "B" => Some(PhaseId::B),
            "c" | "C" => Some(PhaseId::C),
            _ => None,
        }
    }

    /// Nominal balanced angle of the phase in degrees.
    pub fn nominal_angle_deg(self) -> f64 {
        match self {
            PhaseId::A => 0.0,
            PhaseId::B => -120.0,
            PhaseId::C => 120.0,
        }
    }
}

/// A `(bus, phase)` pair, printed as `bus.a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub bus: String,
    pub phase: PhaseId,
}

impl NodeId {
    pub fn new(bus: impl Into<String>, phase: PhaseId) -> Self {
        NodeId {
            bus: bus.into(),
            phase,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus, self.phase.as_char())
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (bus, phase) = s.rsplit_once('.').ok_or_else(|| {
            Error::InvalidArgument(format!("node `{s}` is not of the form bus.phase"))
        })?;
        let phase = PhaseId::parse(phase)
            .ok_or_else(|| Error::InvalidArgument(format!("bad phase in node `{s}`")))?;
        if bus.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "empty bus name in node `{s}`"
            )));
        }
        Ok(NodeId::new(bus, phase))
    }
}

/// Dense ordering of all declared nodes.
///
/// Buses appear in declaration order, phases `a < b < c` within a bus.
#[derive(Debug, Clone)]
pub struct NodeIndexMap {
    nodes: Vec<NodeId>,
    lookup: HashMap<NodeId, usize>,
    bus_slots: Vec<[Option<usize>; 3]>,
    slack: Vec<usize>,
    composite: Vec<usize>,
    is_slack: Vec<bool>,
}

impl NodeIndexMap {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, node: &NodeId) -> Option<usize> {
        self.lookup.get(node).copied()
    }

    pub fn require(&self, node: &NodeId) -> Result<usize> {
        self.get(node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    pub fn node(&self, i: usize) -> &NodeId {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Node indices of bus `b` (declaration position), one slot per phase.
    pub fn bus_slots(&self, b: usize) -> &[Option<usize>; 3] {
        &self.bus_slots[b]
    }

    /// Indices of slack nodes, ascending.
    pub fn slack(&self) -> &[usize] {
        &self.slack
    }

    /// Indices of all non-slack nodes, ascending.
    pub fn composite(&self) -> &[usize] {
        &self.composite
    }

    pub fn is_slack(&self, i: usize) -> bool {
        self.is_slack[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Line,
    Transformer,
    Capacitor,
    Switch,
}

/// A network element stamped through its primitive admittance.
///
/// The primitive is ordered `[from.., to..]`; shunt elements have no `to` nodes.
#[derive(Debug, Clone)]
pub struct BranchElement {
    pub id: String,
    pub kind: BranchKind,
    pub from: Vec<NodeId>,
    pub to: Vec<NodeId>,
    pub primitive: DMatrix<Complex64>,
}

impl BranchElement {
    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.from.iter().chain(self.to.iter())
    }
}

#[derive(Debug, Clone)]
pub struct RegulatorAttachment {
    pub id: String,
    pub model: RegulatorModel,
    pub from: Vec<NodeId>,
    pub to: Vec<NodeId>,
    /// Initial tap position.
    pub tap: i32,
}

impl RegulatorAttachment {
    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.from.iter().chain(self.to.iter())
    }
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub name: String,
    /// Declared phases, ascending.
    pub phases: Vec<PhaseId>,
    /// Line-to-neutral voltage base (kV).
    pub kv_ln: f64,
    pub composite: CompositeBus,
}

impl Bus {
    pub fn has_phase(&self, phase: PhaseId) -> bool {
        self.phases.contains(&phase)
    }
}

#[derive(Debug, Clone)]
pub struct SlackBus {
    pub bus: String,
    /// Fixed phasors (p.u.) indexed a, b, c; only declared phases are used.
    pub voltages: [Complex64; 3],
}

impl SlackBus {
    pub fn balanced(bus: impl Into<String>, magnitude: f64, angle_a_deg: f64) -> Self {
        let voltages = PhaseId::ALL.map(|p| {
            Complex64::from_polar(
                magnitude,
                (angle_a_deg + p.nominal_angle_deg()).to_radians(),
            )
        });
        SlackBus {
            bus: bus.into(),
            voltages,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    /// Per-phase power base (VA).
    pub s_base_va: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<BranchElement>,
    pub regulators: Vec<RegulatorAttachment>,
    pub slack: Vec<SlackBus>,
}

impl NetworkModel {
    pub fn bus_position(&self, name: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.name == name)
    }

    pub fn bus(&self, name: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.name == name)
    }

    pub fn bus_mut(&mut self, name: &str) -> Option<&mut Bus> {
        self.buses.iter_mut().find(|b| b.name == name)
    }

    pub fn regulator_position(&self, id: &str) -> Option<usize> {
        self.regulators.iter().position(|r| r.id == id)
    }

    pub fn initial_taps(&self) -> Vec<f64> {
        self.regulators.iter().map(|r| f64::from(r.tap)).collect()
    }

    pub fn regulator_ids(&self) -> Vec<String> {
        self.regulators.iter().map(|r| r.id.clone()).collect()
    }

    fn node_exists(&self, node: &NodeId) -> bool {
        self.bus(&node.bus).is_some_and(|b| b.has_phase(node.phase))
    }

    /// Structural checks: unique buses, references, slack presence, connectivity.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for bus in &self.buses {
            if !names.insert(bus.name.as_str()) {
                return Err(Error::DuplicateBus(bus.name.clone()));
            }
            if bus.phases.is_empty() {
                return Err(Error::EmptyPhaseSet(bus.name.clone()));
            }
            if !(bus.kv_ln > 0.0) {
                return Err(Error::Model(format!(
                    "bus `{}` has non-positive voltage base",
                    bus.name
                )));
            }
            self.validate_composite(bus)?;
        }
        if !(self.s_base_va > 0.0) {
            return Err(Error::Model("power base must be positive".into()));
        }
        if self.slack.is_empty() {
            return Err(Error::Model("at least one slack bus is required".into()));
        }
        let mut slack_names = HashSet::new();
        for slack in &self.slack {
            if self.bus(&slack.bus).is_none() {
                return Err(Error::Model(format!(
                    "slack bus `{}` is not declared",
                    slack.bus
                )));
            }
            if !slack_names.insert(slack.bus.as_str()) {
                return Err(Error::Model(format!(
                    "slack bus `{}` listed twice",
                    slack.bus
                )));
            }
        }
        for branch in &self.branches {
            for node in branch.nodes() {
                if !self.node_exists(node) {
                    return Err(Error::UnknownNode(format!(
                        "{node} (element `{}`)",
                        branch.id
                    )));
                }
            }
        }
        let mut reg_ids = HashSet::new();
        let mut reg_pairs = HashSet::new();
        for reg in &self.regulators {
            if !reg_ids.insert(reg.id.as_str()) {
                return Err(Error::Model(format!(
                    "regulator id `{}` is not unique",
                    reg.id
                )));
            }
            let phases = reg.model.kind.phase_count();
            if reg.from.len() != phases || reg.to.len() != phases {
                return Err(Error::Model(format!(
                    "regulator `{}` needs {phases} from and {phases} to node(s)",
                    reg.id
                )));
            }
            for node in reg.nodes() {
                if !self.node_exists(node) {
                    return Err(Error::UnknownNode(format!(
                        "{node} (regulator `{}`)",
                        reg.id
                    )));
                }
            }
            for (f, t) in reg.from.iter().zip(&reg.to) {
                if !reg_pairs.insert((f.clone(), t.clone())) {
                    return Err(Error::Model(format!(
                        "node pair {f}-{t} carries two regulators"
                    )));
                }
            }
            reg.model.check_tap(f64::from(reg.tap))?;
        }
        self.check_connected()
    }

    fn validate_composite(&self, bus: &Bus) -> Result<()> {
        let c = &bus.composite;
        if let Some(wye) = &c.wye {
            for p in PhaseId::ALL {
                if wye.s[p.index()] != Complex64::new(0.0, 0.0) && !bus.has_phase(p) {
                    return Err(Error::UnknownNode(format!(
                        "{} (wye load)",
                        NodeId::new(&bus.name, p)
                    )));
                }
            }
        }
        if let Some(delta) = &c.delta {
            for pair in crate::composite::DeltaPair::ALL {
                let (p, k) = pair.phases();
                if delta.pair(pair) != Complex64::new(0.0, 0.0)
                    && !(bus.has_phase(p) && bus.has_phase(k))
                {
                    return Err(Error::Model(format!(
                        "delta load on pair {} at bus `{}` needs both phases",
                        pair.name(),
                        bus.name
                    )));
                }
            }
        }
        for der in &c.ders_1ph {
            if !bus.has_phase(der.phase) {
                return Err(Error::UnknownNode(format!(
                    "{} (DER)",
                    NodeId::new(&bus.name, der.phase)
                )));
            }
            der.curve.validate()?;
        }
        if let Some(der) = &c.der_3ph {
            if bus.phases.len() != 3 {
                return Err(Error::Model(format!(
                    "three-phase DER on bus `{}` which has {} phase(s)",
                    bus.name,
                    bus.phases.len()
                )));
            }
            der.curve.validate()?;
        }
        Ok(())
    }

    // Node-level connectivity: every node must reach a slack node through
    // branch or regulator couplings.
    fn check_connected(&self) -> Result<()> {
        let index = build_node_index(self)?;
        let n = index.len();
        let mut adj = vec![Vec::new(); n];
        let mut link = |nodes: Vec<usize>, prim: Option<&DMatrix<Complex64>>| {
            for (a, &i) in nodes.iter().enumerate() {
                for (b, &j) in nodes.iter().enumerate() {
                    if i != j && prim.is_none_or(|m| m[(a, b)].norm() > 0.0) {
                        adj[i].push(j);
                    }
                }
            }
        };
        for branch in &self.branches {
            let nodes = branch
                .nodes()
                .map(|n| index.require(n))
                .collect::<Result<Vec<_>>>()?;
            link(nodes, Some(&branch.primitive));
        }
        for reg in &self.regulators {
            for (f, t) in reg.from.iter().zip(&reg.to) {
                link(vec![index.require(f)?, index.require(t)?], None);
            }
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = index.slack().iter().copied().collect();
        for &s in index.slack() {
            seen[s] = true;
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Model(format!(
                "node {} is not connected to any slack bus",
                index.node(i)
            ))),
            None => Ok(()),
        }
    }
}

/// Dense node ordering of a model.
pub fn build_node_index(model: &NetworkModel) -> Result<NodeIndexMap> {
    let mut nodes = Vec::new();
    let mut lookup = HashMap::new();
    let mut bus_slots = Vec::with_capacity(model.buses.len());
    for bus in &model.buses {
        if bus.phases.is_empty() {
            return Err(Error::EmptyPhaseSet(bus.name.clone()));
        }
        let mut slots = [None; 3];
        for phase in PhaseId::ALL {
            if !bus.has_phase(phase) {
                continue;
            }
            let id = NodeId::new(&bus.name, phase);
            if lookup.contains_key(&id) {
                return Err(Error::DuplicateBus(bus.name.clone()));
            }
            slots[phase.index()] = Some(nodes.len());
            lookup.insert(id.clone(), nodes.len());
            nodes.push(id);
        }
        bus_slots.push(slots);
    }
    let mut is_slack = vec![false; nodes.len()];
    for slack in &model.slack {
        let b = model
            .bus_position(&slack.bus)
            .ok_or_else(|| Error::Model(format!("slack bus `{}` is not declared", slack.bus)))?;
        for i in bus_slots[b].iter().flatten() {
            is_slack[*i] = true;
        }
    }
    let slack = (0..nodes.len()).filter(|&i| is_slack[i]).collect();
    let composite = (0..nodes.len()).filter(|&i| !is_slack[i]).collect();
    Ok(NodeIndexMap {
        nodes,
        lookup,
        bus_slots,
        slack,
        composite,
        is_slack,
    })
}

/// A validated model with its node index and nominal admittance matrix.
///
/// Immutable once built; share it freely between concurrent solves.
#[derive(Debug, Clone)]
pub struct Network {
    pub model: NetworkModel,
    pub index: NodeIndexMap,
    pub y_nominal: DMatrix<Complex64>,
}

impl Network {
    pub fn new(model: NetworkModel) -> Result<Self> {
        model.validate()?;
        let index = build_node_index(&model)?;
        let y_nominal = assemble_y_nominal(&model, &index)?;
        Ok(Network {
            model,
            index,
            y_nominal,
        })
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Network::new(load_feeder(path)?)
    }

    pub fn node_count(&self) -> usize {
        self.index.len()
    }

    pub fn regulator_count(&self) -> usize {
        self.model.regulators.len()
    }

    pub fn check_taps(&self, taps: &[f64]) -> Result<()> {
        if taps.len() != self.model.regulators.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tap value(s) given for {} regulator(s)",
                taps.len(),
                self.model.regulators.len()
            )));
        }
        for (reg, &gamma) in self.model.regulators.iter().zip(taps) {
            reg.model
                .check_tap(gamma)
                .map_err(|e| Error::InvalidArgument(format!("regulator `{}`: {e}", reg.id)))?;
        }
        Ok(())
    }

    /// `Y° + δY(taps)`.
    pub fn y(&self, taps: &[f64]) -> Result<DMatrix<Complex64>> {
        self.check_taps(taps)?;
        Ok(&self.y_nominal + assemble_delta_y(&self.model, &self.index, taps)?)
    }

    /// Vector with the specified slack phasors and zeros elsewhere.
    pub fn slack_voltages(&self) -> DVector<Complex64> {
        let mut e = DVector::zeros(self.index.len());
        for slack in &self.model.slack {
            let b = self
                .model
                .bus_position(&slack.bus)
                .expect("validated slack bus");
            for (slot, v) in self.index.bus_slots(b).iter().zip(slack.voltages) {
                if let Some(i) = slot {
                    e[*i] = v;
                }
            }
        }
        e
    }

    /// Applies `"reg=tap,..."` overrides on top of the initial taps.
    pub fn taps_with_overrides(&self, overrides: &str) -> Result<Vec<f64>> {
        let mut taps = self.model.initial_taps();
        for item in overrides
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let (id, value) = item.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("tap override `{item}` is not id=value"))
            })?;
            let s = self
                .model
                .regulator_position(id.trim())
                .ok_or_else(|| Error::UnknownRegulator(id.trim().to_string()))?;
            taps[s] = value.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("tap value `{value}` is not a number"))
            })?;
        }
        self.check_taps(&taps)?;
        Ok(taps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bus(name: &str, phases: &[PhaseId]) -> Bus {
        Bus {
            name: name.into(),
            phases: phases.to_vec(),
            kv_ln: 2.4,
            composite: CompositeBus::default(),
        }
    }

    fn model(buses: Vec<Bus>) -> NetworkModel {
        let slack = vec![SlackBus::balanced(&buses[0].name, 1.0, 0.0)];
        NetworkModel {
            s_base_va: 1e6,
            buses,
            branches: vec![],
            regulators: vec![],
            slack,
        }
    }

    use PhaseId::*;

    #[test]
    fn two_three_phase_buses() {
        let m = model(vec![bus("b1", &[A, B, C]), bus("b2", &[A, B, C])]);
        let idx = build_node_index(&m).unwrap();
        assert_eq!(idx.len(), 6);
        assert_eq!(idx.get(&NodeId::new("b2", B)), Some(4));
        assert_eq!(idx.slack(), &[0, 1, 2]);
        assert_eq!(idx.composite(), &[3, 4, 5]);
    }

    #[test]
    fn partial_phase_bus_has_no_gap_entry() {
        let m = model(vec![bus("s", &[A, B, C]), bus("x", &[A, C])]);
        let idx = build_node_index(&m).unwrap();
        assert_eq!(idx.len(), 5);
        assert_eq!(idx.get(&NodeId::new("x", B)), None);
        assert_eq!(idx.get(&NodeId::new("x", C)), Some(4));
        assert_eq!(idx.bus_slots(1), &[Some(3), None, Some(4)]);
    }

    #[test]
    fn duplicate_and_empty_buses_are_rejected() {
        let m = model(vec![bus("b1", &[A]), bus("b1", &[A])]);
        assert!(matches!(m.validate(), Err(Error::DuplicateBus(_))));
        let m = model(vec![bus("b1", &[A]), bus("b2", &[])]);
        assert!(matches!(build_node_index(&m), Err(Error::EmptyPhaseSet(_))));
    }

    #[test]
    fn node_id_round_trips_through_text() {
        let id: NodeId = "bus.7.c".parse().unwrap();
        assert_eq!(id, NodeId::new("bus.7", C));
        assert_eq!(id.to_string(), "bus.7.c");
        assert!("nophase".parse::<NodeId>().is_err());
        assert!("b.d".parse::<NodeId>().is_err());
    }

    #[test]
    fn island_is_reported() {
        let m = model(vec![bus("s", &[A, B, C]), bus("island", &[A])]);
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("island.a"), "{err}");
    }
}

//! Composite bus injection model.
//!
//! Every bus may host a Wye load, a Delta load, any number of single-phase
//! DERs and at most one three-phase DER. Loads are constant power. DER
//! reactive output follows a piecewise-linear volt-var curve: slope `droop`
//! around `v_ref`, flat outside `[v_min, v_max]`. A three-phase DER reads the
//! average of its three phase magnitudes and splits its output evenly.
//!
//! Delta loads become nodal (Wye) injections through a voltage-dependent
//! transform. A phase-pair load `S` across nodes `p`-`k` contributes
//!
//! ```text
//!   S_p +=  S · E_p / (E_p - E_k)
//!   S_k += -S · E_k / (E_p - E_k)
//! ```
//!
//! so the two shares always add back up to `S`.
//!
//! Network-wide matrices (`Γ`, `Π`, `Ψ`, `Ω`, `Λ`) are N×N over the dense node
//! index. Delta pair powers are stored in the slot of the pair's first phase
//! (`ab` at `a`, `bc` at `b`, `ca` at `c`), which always exists when the pair is
//! valid, so `Γ` is square as well.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::netmodel::{NetworkModel, NodeIndexMap, PhaseId};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Smallest phase-pair voltage difference (p.u.) a loaded Delta branch may see.
pub const MIN_PAIR_VOLTAGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeltaPair {
    Ab,
    Bc,
    Ca,
}

impl DeltaPair {
    pub const ALL: [DeltaPair; 3] = [DeltaPair::Ab, DeltaPair::Bc, DeltaPair::Ca];

    pub fn phases(self) -> (PhaseId, PhaseId) {
        match self {
            DeltaPair::Ab => (PhaseId::A, PhaseId::B),
            DeltaPair::Bc => (PhaseId::B, PhaseId::C),
            DeltaPair::Ca => (PhaseId::C, PhaseId::A),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeltaPair::Ab => "ab",
            DeltaPair::Bc => "bc",
            DeltaPair::Ca => "ca",
        }
    }

    pub fn parse(s: &str) -> Option<DeltaPair> {
        match s {
            "ab" | "ba" => Some(DeltaPair::Ab),
            "bc" | "cb" => Some(DeltaPair::Bc),
            "ca" | "ac" => Some(DeltaPair::Ca),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Collapsed pair voltage under a loaded Delta branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaSingularity(pub DeltaPair);

impl DeltaSingularity {
    pub fn at_bus(self, bus: &str) -> Error {
        Error::SingularDeltaTransform {
            bus: bus.to_string(),
            pair: self.0.name(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WyeLoad {
    /// Consumed power per phase, indexed a, b, c (p.u.).
    pub s: [Complex64; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeltaLoad {
    /// Consumed power per phase pair, indexed ab, bc, ca (p.u.).
    pub s: [Complex64; 3],
}

impl DeltaLoad {
    pub fn pair(&self, pair: DeltaPair) -> Complex64 {
        self.s[pair.index()]
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(|s| *s == ZERO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltVarCurve {
    /// Signed slope dQ/dE in p.u.; negative absorbs vars as voltage rises.
    pub droop: f64,
    pub v_ref: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl VoltVarCurve {
    pub const DEFAULT_BAND: (f64, f64) = (0.9, 1.1);

    pub fn new(droop: f64, v_ref: f64) -> Self {
        VoltVarCurve {
            droop,
            v_ref,
            v_min: Self::DEFAULT_BAND.0,
            v_max: Self::DEFAULT_BAND.1,
        }
    }

    pub fn constant() -> Self {
        Self::new(0.0, 1.0)
    }

    pub fn reactive_power(&self, v: f64) -> f64 {
        self.droop * (v.clamp(self.v_min, self.v_max) - self.v_ref)
    }

    /// Local slope of the curve. Breakpoints take the inside-band slope.
    pub fn slope(&self, v: f64) -> f64 {
        if v >= self.v_min && v <= self.v_max {
            self.droop
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::Model(format!(
                "volt-var band [{}, {}] is empty",
                self.v_min, self.v_max
            )));
        }
        if self.v_ref < self.v_min || self.v_ref > self.v_max {
            return Err(Error::Model(format!(
                "volt-var reference {} outside band [{}, {}]",
                self.v_ref, self.v_min, self.v_max
            )));
        }
        if !self.droop.is_finite() {
            return Err(Error::Model("volt-var droop must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Der1Phase {
    pub phase: PhaseId,
    /// Active power (p.u.).
    pub p: f64,
    /// Fixed reactive component (p.u.), e.g. from a power-factor setting.
    pub q: f64,
    pub curve: VoltVarCurve,
}

impl Der1Phase {
    pub fn injection(&self, v: f64) -> Complex64 {
        Complex64::new(self.p, self.q + self.curve.reactive_power(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Der3Phase {
    /// Total active power over the three phases (p.u.).
    pub p: f64,
    /// Total fixed reactive component (p.u.).
    pub q: f64,
    pub curve: VoltVarCurve,
}

impl Der3Phase {
    /// Per-phase injection given the three phase magnitudes.
    pub fn injection_per_phase(&self, magnitudes: [f64; 3]) -> Complex64 {
        let avg = magnitudes.iter().sum::<f64>() / 3.0;
        Complex64::new(self.p, self.q + self.curve.reactive_power(avg)) / 3.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompositeBus {
    pub wye: Option<WyeLoad>,
    pub delta: Option<DeltaLoad>,
    pub ders_1ph: Vec<Der1Phase>,
    pub der_3ph: Option<Der3Phase>,
}

impl CompositeBus {
    pub fn is_empty(&self) -> bool {
        self.wye.is_none()
            && self.delta.is_none()
            && self.ders_1ph.is_empty()
            && self.der_3ph.is_none()
    }

    pub fn add_wye(&mut self, phase: PhaseId, s: Complex64) {
        self.wye.get_or_insert_with(WyeLoad::default).s[phase.index()] += s;
    }

    pub fn add_delta(&mut self, pair: DeltaPair, s: Complex64) {
        self.delta.get_or_insert_with(DeltaLoad::default).s[pair.index()] += s;
    }
}

/// Γ for one bus: rows are phases a, b, c; columns are pairs ab, bc, ca.
///
/// Columns of unloaded pairs are left at zero so that absent phases never
/// enter a division.
pub fn gamma_coefficients(
    e: &[Complex64; 3],
    delta: &DeltaLoad,
) -> std::result::Result<[[Complex64; 3]; 3], DeltaSingularity> {
    let mut g = [[ZERO; 3]; 3];
    for pair in DeltaPair::ALL {
        if delta.pair(pair) == ZERO {
            continue;
        }
        let (p, k) = pair.phases();
        let (ep, ek) = (e[p.index()], e[k.index()]);
        let d = ep - ek;
        if d.norm() < MIN_PAIR_VOLTAGE {
            return Err(DeltaSingularity(pair));
        }
        g[p.index()][pair.index()] = ep / d;
        g[k.index()][pair.index()] = -ek / d;
    }
    Ok(g)
}

/// Wye-equivalent per-phase powers of a Delta load at bus voltages `e`.
pub fn gamma_matrix(
    e: &[Complex64; 3],
    delta: &DeltaLoad,
) -> std::result::Result<[Complex64; 3], DeltaSingularity> {
    let g = gamma_coefficients(e, delta)?;
    let mut out = [ZERO; 3];
    for (row, out) in g.iter().zip(out.iter_mut()) {
        *out = row.iter().zip(delta.s.iter()).map(|(g, s)| g * s).sum();
    }
    Ok(out)
}

/// Holomorphic Jacobian `∂S_wye/∂E` of [`gamma_matrix`] for one bus.
pub fn pi_block(
    e: &[Complex64; 3],
    delta: &DeltaLoad,
) -> std::result::Result<[[Complex64; 3]; 3], DeltaSingularity> {
    let mut j = [[ZERO; 3]; 3];
    for pair in DeltaPair::ALL {
        let s = delta.pair(pair);
        if s == ZERO {
            continue;
        }
        let (p, k) = pair.phases();
        let (ip, ik) = (p.index(), k.index());
        let d = e[ip] - e[ik];
        if d.norm() < MIN_PAIR_VOLTAGE {
            return Err(DeltaSingularity(pair));
        }
        let d2 = d * d;
        let sp = s * e[ip] / d2;
        let sk = s * e[ik] / d2;
        j[ip][ip] -= sk;
        j[ip][ik] += sp;
        j[ik][ip] += sk;
        j[ik][ik] -= sp;
    }
    Ok(j)
}

/// Conjugate net injection `-S̲_LY - conj(Γ·S_Δ) + S̲_G` at one bus.
///
/// `e` holds the bus phasors indexed a, b, c; undeclared phases are ignored.
pub fn conj_injection(
    bus: &CompositeBus,
    e: &[Complex64; 3],
) -> std::result::Result<[Complex64; 3], DeltaSingularity> {
    let mut s = [ZERO; 3];
    if let Some(wye) = &bus.wye {
        for (s, load) in s.iter_mut().zip(wye.s.iter()) {
            *s -= load;
        }
    }
    if let Some(delta) = &bus.delta {
        let equiv = gamma_matrix(e, delta)?;
        for (s, load) in s.iter_mut().zip(equiv.iter()) {
            *s -= load;
        }
    }
    for der in &bus.ders_1ph {
        let i = der.phase.index();
        s[i] += der.injection(e[i].norm());
    }
    if let Some(der) = &bus.der_3ph {
        let per_phase = der.injection_per_phase([e[0].norm(), e[1].norm(), e[2].norm()]);
        for s in s.iter_mut() {
            *s += per_phase;
        }
    }
    Ok(s.map(|v| v.conj()))
}

/// Phasors of one bus pulled out of the full voltage vector (zeros for absent phases).
pub(crate) fn bus_voltages(slots: &[Option<usize>; 3], e: &DVector<Complex64>) -> [Complex64; 3] {
    slots.map(|slot| slot.map_or(ZERO, |i| e[i]))
}

/// Block-diagonal Γ over the node index.
pub fn build_gamma_block_matrix(
    model: &NetworkModel,
    index: &NodeIndexMap,
    e: &DVector<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let n = index.len();
    let mut gamma = DMatrix::zeros(n, n);
    for (b, bus) in model.buses.iter().enumerate() {
        let Some(delta) = &bus.composite.delta else {
            continue;
        };
        let slots = index.bus_slots(b);
        let g =
            gamma_coefficients(&bus_voltages(slots, e), delta).map_err(|s| s.at_bus(&bus.name))?;
        for phase in PhaseId::ALL {
            let Some(row) = slots[phase.index()] else {
                continue;
            };
            for pair in DeltaPair::ALL {
                if let Some(col) = slots[pair.phases().0.index()] {
                    gamma[(row, col)] = g[phase.index()][pair.index()];
                }
            }
        }
    }
    Ok(gamma)
}

/// Delta pair powers laid out over the node index (pair stored at its first phase).
pub fn delta_load_vector(model: &NetworkModel, index: &NodeIndexMap) -> DVector<Complex64> {
    let mut v = DVector::zeros(index.len());
    for (b, bus) in model.buses.iter().enumerate() {
        let Some(delta) = &bus.composite.delta else {
            continue;
        };
        let slots = index.bus_slots(b);
        for pair in DeltaPair::ALL {
            if let Some(i) = slots[pair.phases().0.index()] {
                v[i] = delta.pair(pair);
            }
        }
    }
    v
}

/// Block-diagonal Π = ∂(Γ·S_Δ)/∂E over the node index.
pub fn pi_matrix(
    model: &NetworkModel,
    index: &NodeIndexMap,
    e: &DVector<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let n = index.len();
    let mut pi = DMatrix::zeros(n, n);
    for (b, bus) in model.buses.iter().enumerate() {
        let Some(delta) = &bus.composite.delta else {
            continue;
        };
        let slots = index.bus_slots(b);
        let j = pi_block(&bus_voltages(slots, e), delta).map_err(|s| s.at_bus(&bus.name))?;
        for p in PhaseId::ALL {
            for k in PhaseId::ALL {
                if let (Some(r), Some(c)) = (slots[p.index()], slots[k.index()]) {
                    pi[(r, c)] = j[p.index()][k.index()];
                }
            }
        }
    }
    Ok(pi)
}

/// Diagonal of effective single-phase droops at the operating magnitudes.
pub fn psi_matrix(
    model: &NetworkModel,
    index: &NodeIndexMap,
    e: &DVector<Complex64>,
) -> DMatrix<f64> {
    let n = index.len();
    let mut psi = DMatrix::zeros(n, n);
    for (b, bus) in model.buses.iter().enumerate() {
        let slots = index.bus_slots(b);
        for der in &bus.composite.ders_1ph {
            if let Some(i) = slots[der.phase.index()] {
                psi[(i, i)] += der.curve.slope(e[i].norm());
            }
        }
    }
    psi
}

/// `(Ω, Λ)` for the three-phase DERs: `Ω` blocks are `m/9` everywhere, `Λ`
/// blocks are `m/3` on the diagonal, with `m` the local slope at the phase
/// average magnitude.
pub fn omega_lambda_matrices(
    model: &NetworkModel,
    index: &NodeIndexMap,
    e: &DVector<Complex64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = index.len();
    let mut omega = DMatrix::zeros(n, n);
    let mut lambda = DMatrix::zeros(n, n);
    for (b, bus) in model.buses.iter().enumerate() {
        let Some(der) = &bus.composite.der_3ph else {
            continue;
        };
        let slots = index.bus_slots(b);
        let nodes: Vec<usize> = slots.iter().flatten().copied().collect();
        if nodes.len() != 3 {
            return Err(Error::Model(format!(
                "three-phase DER on bus `{}` which has {} phase(s)",
                bus.name,
                nodes.len()
            )));
        }
        let avg = nodes.iter().map(|&i| e[i].norm()).sum::<f64>() / 3.0;
        let m = der.curve.slope(avg);
        for &r in &nodes {
            lambda[(r, r)] = m / 3.0;
            for &c in &nodes {
                omega[(r, c)] = m / 9.0;
            }
        }
    }
    Ok((omega, lambda))
}

/// Conjugate net injections for the whole network.
pub fn conj_injections(
    model: &NetworkModel,
    index: &NodeIndexMap,
    e: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    let mut out = DVector::zeros(index.len());
    for (b, bus) in model.buses.iter().enumerate() {
        if bus.composite.is_empty() {
            continue;
        }
        let slots = index.bus_slots(b);
        let s = conj_injection(&bus.composite, &bus_voltages(slots, e))
            .map_err(|s| s.at_bus(&bus.name))?;
        for (slot, s) in slots.iter().zip(s) {
            if let Some(i) = slot {
                out[*i] = s;
            }
        }
    }
    Ok(out)
}

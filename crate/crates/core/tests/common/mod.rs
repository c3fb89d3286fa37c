//! Shared fixtures and independent reference computations for the
//! integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use unbalsens::netmodel::Network;
use unbalsens::oracle::{fd_sensitivity_tap, OracleConfig};
use unbalsens::powerflow::{solve_power_flow, OperatingPoint, SolverConfig};
use unbalsens::sensitivity::solve_all;

pub const FOUR_BUS: &str = "four_bus.json";
pub const FOUR_BUS_CS_A: &str = "four_bus_cs_a.json";
pub const FOUR_BUS_CS_B: &str = "four_bus_cs_b.json";
pub const RING: &str = "ring_six_bus.json";
pub const RING_CS_A: &str = "ring_six_bus_cs_a.json";
pub const RING_CS_B: &str = "ring_six_bus_cs_b.json";
pub const ALL_FEEDERS: [&str; 6] = [
    FOUR_BUS,
    FOUR_BUS_CS_A,
    FOUR_BUS_CS_B,
    RING,
    RING_CS_A,
    RING_CS_B,
];

pub const TAP_SAMPLES: [f64; 7] = [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0];

pub fn feeder_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("feeders")
        .join(name)
}

pub fn feeder(name: &str) -> Network {
    Network::from_file(feeder_path(name)).expect("bundled feeder loads")
}

pub fn solve(net: &Network, taps: &[f64]) -> OperatingPoint {
    solve_power_flow(net, taps, &SolverConfig::default(), None).expect("bundled feeder converges")
}

pub fn solve_base(net: &Network) -> OperatingPoint {
    solve(net, &net.model.initial_taps())
}

/// Conjugate net injection written out directly from the model data:
/// constant-power loads, delta pairs split by voltage ratio, and volt-var DERs.
pub fn reference_conj_injection(net: &Network, e: &DVector<Complex64>) -> DVector<Complex64> {
    let mut s = DVector::<Complex64>::zeros(e.len());
    for (b, bus) in net.model.buses.iter().enumerate() {
        let slots = net.index.bus_slots(b);
        let at = |p: usize| slots[p].map(|i| e[i]).unwrap_or_default();
        let c = &bus.composite;
        if let Some(w) = &c.wye {
            for (slot, load) in slots.iter().zip(&w.s) {
                if let Some(i) = slot {
                    s[*i] -= load;
                }
            }
        }
        if let Some(d) = &c.delta {
            for (k, (p, q)) in [(0usize, 1usize), (1, 2), (2, 0)].into_iter().enumerate() {
                if d.s[k] == Complex64::default() {
                    continue;
                }
                let diff = at(p) - at(q);
                s[slots[p].unwrap()] -= d.s[k] * at(p) / diff;
                s[slots[q].unwrap()] += d.s[k] * at(q) / diff;
            }
        }
        for der in &c.ders_1ph {
            let i = slots[der.phase.index()].unwrap();
            let v = e[i].norm().clamp(der.curve.v_min, der.curve.v_max);
            s[i] += Complex64::new(der.p, der.q + der.curve.droop * (v - der.curve.v_ref));
        }
        if let Some(der) = &c.der_3ph {
            let v = (0..3).map(|p| at(p).norm()).sum::<f64>() / 3.0;
            let v = v.clamp(der.curve.v_min, der.curve.v_max);
            let q = der.q + der.curve.droop * (v - der.curve.v_ref);
            for slot in slots.iter().flatten() {
                s[*slot] += Complex64::new(der.p, q) / 3.0;
            }
        }
    }
    s.map(|v| v.conj())
}

/// `conj(E) ⊙ (Y E) − conj(S_inj)` split into real and imaginary halves.
pub fn reference_residual(
    net: &Network,
    y: &DMatrix<Complex64>,
    e: &DVector<Complex64>,
) -> DVector<f64> {
    let n = e.len();
    let ye = y * e;
    let s = reference_conj_injection(net, e);
    let h = DVector::from_fn(n, |i, _| e[i].conj() * ye[i] - s[i]);
    DVector::from_fn(2 * n, |k, _| if k < n { h[k].re } else { h[k - n].im })
}

/// Central-difference Jacobian of [`reference_residual`] with respect to
/// `[|E|; θ]`.
pub fn fd_residual_jacobian(net: &Network, op: &OperatingPoint, step: f64) -> DMatrix<f64> {
    let y = net.y(&op.taps).unwrap();
    let n = op.voltages.len();
    let mags = op.magnitudes();
    let angles = op.angles();
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for col in 0..2 * n {
        let at = |sign: f64| {
            let mut m = mags.clone();
            let mut a = angles.clone();
            if col < n {
                m[col] += sign * step;
            } else {
                a[col - n] += sign * step;
            }
            let e = DVector::from_fn(n, |i, _| Complex64::from_polar(m[i], a[i]));
            reference_residual(net, &y, &e)
        };
        jac.set_column(col, &((at(1.0) - at(-1.0)) / (2.0 * step)));
    }
    jac
}

/// Mean absolute error of the tap sensitivities against finite differences,
/// over non-slack rows, each regulator moved through `taps_at` in turn.
/// Returns `(magnitude MAE, angle MAE)`.
pub fn tap_mae(net: &Network, taps_at: &[f64]) -> (f64, f64) {
    let n = net.node_count();
    let cfg = OracleConfig::default();
    let base = net.model.initial_taps();
    let (mut sum_e, mut sum_t, mut count) = (0.0, 0.0, 0usize);
    for s in 0..net.regulator_count() {
        for &gamma in taps_at {
            let mut taps = base.clone();
            taps[s] = gamma;
            let op = solve(net, &taps);
            let sens = solve_all(net, &op).unwrap();
            let fd = fd_sensitivity_tap(net, &op, s, &cfg).unwrap();
            for i in (0..n).filter(|&i| !net.index.is_slack(i)) {
                sum_e += (sens.de_dgamma[(i, s)] - fd[i]).abs();
                sum_t += (sens.dtheta_dgamma[(i, s)] - fd[n + i]).abs();
                count += 1;
            }
        }
    }
    (sum_e / count as f64, sum_t / count as f64)
}

/// Largest absolute entry over the given rows.
pub fn max_abs_rows(m: &DMatrix<f64>, rows: &[usize]) -> f64 {
    rows.iter()
        .flat_map(|&r| m.row(r).iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

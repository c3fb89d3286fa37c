mod common;

use nalgebra::DMatrix;
use num_complex::Complex64;
use unbalsens::netmodel::{assemble_d_delta_y, Network};
use unbalsens::powerflow::{solve_power_flow, SolverConfig};
use unbalsens::sensitivity::{build_system_blocks, make_pv_bus, rhs_for_taps, solve_all};

use common::*;

/// |det| after scaling every row to unit infinity norm.
fn equilibrated_det(a: &DMatrix<f64>) -> f64 {
    let mut a = a.clone();
    for mut row in a.row_iter_mut() {
        let s = row.amax();
        if s > 0.0 {
            row /= s;
        }
    }
    a.determinant().abs()
}

#[test]
fn slack_replacement_removes_a_singularity() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let blocks = build_system_blocks(&net, &solve_base(&net)).unwrap();
        let ratio = equilibrated_det(&blocks.raw) / equilibrated_det(&blocks.matrix);
        assert!(ratio < 1e-8, "{name}: {ratio:e}");
    }
}

#[test]
fn solves_are_accurate_and_finite_on_every_feeder() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let sens = solve_all(&net, &solve_base(&net)).unwrap();
        let d = &sens.diagnostics;
        assert!(sens.all_finite(), "{name}");
        assert!(d.max_residual() <= 1e-10, "{name}: {:e}", d.max_residual());
        assert!(!d.ill_conditioned, "{name}: {:e}", d.condition_estimate);
    }
}

#[test]
fn slack_rows_and_columns_are_zero() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let sens = solve_all(&net, &solve_base(&net)).unwrap();
        for (k, m) in sens.all().into_iter().enumerate() {
            for &i in net.index.slack() {
                assert!(m.row(i).iter().all(|v| *v == 0.0), "{name}");
                if k < 4 {
                    assert!(m.column(i).iter().all(|v| *v == 0.0), "{name}");
                }
            }
        }
    }
}

#[test]
fn three_phase_tap_rhs_touches_only_its_six_nodes() {
    let net = feeder(FOUR_BUS);
    let op = solve_base(&net);
    let rhs = rhs_for_taps(&net, &op).unwrap();
    let n = net.node_count();
    let s = net.model.regulator_position("svr3").unwrap();
    let reg = &net.model.regulators[s];
    let own: Vec<usize> = reg.nodes().map(|id| net.index.get(id).unwrap()).collect();
    assert_eq!(own.len(), 6);
    for i in 0..n {
        if !own.contains(&i) {
            assert_eq!(rhs[(i, s)], 0.0);
            assert_eq!(rhs[(n + i, s)], 0.0);
        }
    }
    assert!(own
        .iter()
        .filter(|i| !net.index.is_slack(**i))
        .any(|&i| rhs[(i, s)] != 0.0));
}

#[test]
fn tap_rhs_matches_a_direct_evaluation() {
    let net = feeder(RING);
    let op = solve_base(&net);
    let rhs = rhs_for_taps(&net, &op).unwrap();
    let n = net.node_count();
    for s in 0..net.regulator_count() {
        let dy = assemble_d_delta_y(&net.model, &net.index, s, op.taps[s]).unwrap();
        let f = (&dy * &op.voltages).zip_map(&op.voltages, |i, e| -e.conj() * i);
        for i in 0..n {
            let expect = if net.index.is_slack(i) {
                Complex64::default()
            } else {
                f[i]
            };
            assert!((rhs[(i, s)] - expect.re).abs() <= 1e-14);
            assert!((rhs[(n + i, s)] - expect.im).abs() <= 1e-14);
        }
    }
}

#[test]
fn stiffer_droop_pins_the_voltage_harder() {
    let base = feeder(FOUR_BUS).model;
    let mut previous = f64::INFINITY;
    for droop in [-1e3, -1e4, -1e5, -1e6] {
        let net = Network::new(make_pv_bus(&base, "b4", 0.05, 1.0, droop).unwrap()).unwrap();
        let cfg = SolverConfig {
            tolerance: 1e-8,
            ..SolverConfig::default()
        };
        let op = solve_power_flow(&net, &net.model.initial_taps(), &cfg, None).unwrap();
        let i = net.index.require(&"b4.a".parse().unwrap()).unwrap();
        let v = solve_all(&net, &op).unwrap().de_dq[(i, i)];
        assert!(
            v > 0.0 && v < previous,
            "droop {droop}: {v:e} after {previous:e}"
        );
        // The reactive power needed to hold the set point stays below 1 p.u.
        assert!((op.voltages[i].norm() - 1.0).abs() * droop.abs() < 1.0);
        previous = v;
    }
    assert!(previous <= 1e-5);
}

#[test]
fn attachments_change_the_sensitivities() {
    let with = feeder(FOUR_BUS);
    let mut model = with.model.clone();
    for bus in &mut model.buses {
        bus.composite
            .ders_1ph
            .iter_mut()
            .for_each(|d| d.curve.droop = 0.0);
        if let Some(d) = &mut bus.composite.der_3ph {
            d.curve.droop = 0.0;
        }
    }
    let without = Network::new(model).unwrap();
    let a = solve_all(&with, &solve_base(&with)).unwrap();
    let b = solve_all(&without, &solve_base(&without)).unwrap();
    // Volt-var support shrinks the reactive-power sensitivity at the DER bus.
    let i = with.index.require(&"b4.a".parse().unwrap()).unwrap();
    assert!(a.de_dq[(i, i)] < b.de_dq[(i, i)]);
}

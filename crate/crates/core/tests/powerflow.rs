mod common;

use num_complex::Complex64;
use unbalsens::netmodel::{assemble_delta_y, assemble_y};
use unbalsens::powerflow::{solve_power_flow, Method, SolverConfig};

use common::*;

#[test]
fn converged_residual_is_within_ten_times_tolerance() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let op = solve_base(&net);
        let y = net.y(&op.taps).unwrap();
        let r = reference_residual(&net, &y, &op.voltages);
        let n = net.node_count();
        for i in (0..n).filter(|&i| !net.index.is_slack(i)) {
            let m = Complex64::new(r[i], r[n + i]).norm();
            assert!(m <= 1e-9, "{name} node {}: {m:e}", net.index.node(i));
        }
    }
}

#[test]
fn slack_phasors_are_held_exactly() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let op = solve_base(&net);
        let spec = net.slack_voltages();
        for &i in net.index.slack() {
            assert_eq!(op.voltages[i], spec[i], "{name}");
        }
    }
}

#[test]
fn flat_and_warm_starts_reach_the_same_point() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let flat = solve_base(&net);
        let guess = flat.voltages.map(|v| v * Complex64::from_polar(0.97, 0.02));
        let cfg = SolverConfig::default().warm(&guess);
        let warm = solve_power_flow(&net, &flat.taps, &cfg, None).unwrap();
        let diff = (&warm.voltages - &flat.voltages).map(|z| z.norm()).max();
        assert!(diff <= 1e-8, "{name}: {diff:e}");
    }
}

#[test]
fn current_injection_and_newton_agree() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let taps = net.model.initial_taps();
        let solve_with = |method| {
            let cfg = SolverConfig {
                method,
                ..SolverConfig::default()
            };
            solve_power_flow(&net, &taps, &cfg, None).unwrap()
        };
        let ci = solve_with(Method::CurrentInjection);
        let nr = solve_with(Method::Newton);
        assert_eq!(nr.method, Method::Newton);
        assert!(nr.iterations < 10, "{name}: Newton took {}", nr.iterations);
        let diff = (&ci.voltages - &nr.voltages).map(|z| z.norm()).max();
        assert!(diff <= 1e-8, "{name}: {diff:e}");
    }
}

#[test]
fn delta_loads_and_their_wye_totals_draw_different_slack_power() {
    // The two feeders differ only in the connection of the bus-2 load.
    let slack_power = |name| {
        let net = feeder(name);
        let op = solve_base(&net);
        let y = net.y(&op.taps).unwrap();
        let ie = &y * &op.voltages;
        net.index
            .slack()
            .iter()
            .map(|&i| op.voltages[i] * ie[i].conj())
            .sum::<Complex64>()
    };
    let delta = slack_power(FOUR_BUS_CS_B);
    let wye = slack_power(FOUR_BUS_CS_A);
    assert!((delta - wye).norm() > 1e-6, "delta {delta}, wye {wye}");
}

#[test]
fn nominal_admittance_is_unchanged_by_taps() {
    for name in [FOUR_BUS, RING] {
        let net = feeder(name);
        let y0 = net.y_nominal.clone();
        for gamma in TAP_SAMPLES {
            let taps = vec![gamma; net.regulator_count()];
            let y = net.y(&taps).unwrap();
            assert_eq!(net.y_nominal, y0);
            let update = assemble_delta_y(&net.model, &net.index, &taps).unwrap();
            assert_eq!(y, &y0 + &update);
            let direct = assemble_y(&net.model, &net.index, &taps).unwrap();
            let scale = direct.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(
                (&y - &direct).map(|z| z.norm()).max() <= 1e-12 * scale,
                "{name} at {gamma}"
            );
        }
    }
}

#[test]
fn admittance_is_symmetric_at_any_tap() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        for gamma in [-16.0, 0.0, 7.5, 16.0] {
            let y = net.y(&vec![gamma; net.regulator_count()]).unwrap();
            assert!(
                (&y - y.transpose()).map(|z| z.norm()).max() <= 1e-12,
                "{name} at {gamma}"
            );
        }
    }
}

#[test]
fn operating_points_are_in_a_plausible_range() {
    for name in ALL_FEEDERS {
        let net = feeder(name);
        let op = solve_base(&net);
        for v in op.magnitudes().iter() {
            assert!((0.9..1.1).contains(v), "{name}: {v}");
        }
    }
}

mod common;

use unbalsens::oracle::{compare, estimate_all, fd_sensitivity_p, OracleConfig, Scheme};
use unbalsens::sensitivity::solve_all;

use common::*;

/// Largest gap between analytical dE/dP and dθ/dP and central differences
/// with step `h`, over a fixed set of columns.
fn discrepancy(name: &str, h: f64) -> f64 {
    let net = feeder(name);
    let op = solve_base(&net);
    let sens = solve_all(&net, &op).unwrap();
    let cfg = OracleConfig {
        power_step: h,
        ..OracleConfig::default()
    };
    let n = net.node_count();
    let mut worst = 0.0f64;
    for &k in net.index.composite() {
        let fd = fd_sensitivity_p(&net, &op, k, &cfg).unwrap();
        for i in 0..n {
            worst = worst.max((fd[i] - sens.de_dp[(i, k)]).abs());
            worst = worst.max((fd[n + i] - sens.dtheta_dp[(i, k)]).abs());
        }
    }
    worst
}

#[test]
fn halving_the_step_shrinks_the_discrepancy() {
    for name in [FOUR_BUS, RING] {
        let coarse = discrepancy(name, 4e-2);
        let fine = discrepancy(name, 2e-2);
        assert!(fine <= 0.5 * coarse, "{name}: {fine:e} vs {coarse:e}");
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let net = feeder(RING);
    let op = solve_base(&net);
    let one = estimate_all(
        &net,
        &op,
        &OracleConfig {
            workers: 1,
            ..OracleConfig::default()
        },
    )
    .unwrap();
    let four = estimate_all(
        &net,
        &op,
        &OracleConfig {
            workers: 4,
            ..OracleConfig::default()
        },
    )
    .unwrap();
    for (a, b) in one.all().into_iter().zip(four.all()) {
        assert_eq!(a, b);
    }
}

#[test]
fn forward_differences_are_less_accurate_than_central() {
    let net = feeder(FOUR_BUS);
    let op = solve_base(&net);
    let sens = solve_all(&net, &op).unwrap();
    let mape = |scheme| {
        let cfg = OracleConfig {
            scheme,
            ..OracleConfig::default()
        };
        let est = estimate_all(&net, &op, &cfg).unwrap();
        compare(&net, &sens, &est, cfg.mape_floor)
            .unwrap()
            .max_mape()
    };
    let central = mape(Scheme::Central);
    let forward = mape(Scheme::Forward);
    assert!(
        central < forward,
        "central {central:e}, forward {forward:e}"
    );
    assert!(forward < 0.5);
}

#[test]
fn report_counts_cover_every_entry() {
    let net = feeder(FOUR_BUS);
    let op = solve_base(&net);
    let sens = solve_all(&net, &op).unwrap();
    let est = estimate_all(&net, &op, &OracleConfig::default()).unwrap();
    assert!(est.failures.is_empty());
    let report = compare(&net, &sens, &est, 1e-8).unwrap();
    assert_eq!(report.matrices.len(), 6);
    for m in &report.matrices {
        assert_eq!(
            m.included + m.excluded + m.non_finite,
            m.rows * m.columns,
            "{}",
            m.name
        );
        assert_eq!(m.non_finite, 0);
        assert!(m.mae <= 1e-8 && m.mape_percent <= 0.1, "{}", m.name);
    }
    let text = report.to_string();
    assert!(text.contains("dTheta_dGamma"));
}

#[test]
fn tap_columns_use_one_sided_steps_at_the_bounds() {
    let net = feeder(FOUR_BUS);
    let (mae_e, mae_t) = tap_mae(&net, &[-16.0, 16.0]);
    assert!(mae_e <= 1e-4 && mae_t <= 1e-5, "{mae_e:e} {mae_t:e}");
}

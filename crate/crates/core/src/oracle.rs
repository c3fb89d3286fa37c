//! Perturb-and-observe finite-difference estimates and error metrics.
//!
//! Each column is estimated by re-solving the power flow with a small
//! fictitious injection (or a fractional tap move) on either side of the
//! operating point. Re-solves are warm-started and run at a tight tolerance,
//! since differencing amplifies solver error by `1/h`.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::powerflow::{solve_power_flow, Injection, OperatingPoint, SolverConfig};
use crate::sensitivity::{SensitivityMatrices, MATRIX_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Central,
    Forward,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Power perturbation (p.u.).
    pub power_step: f64,
    /// Tap perturbation (taps, continuous).
    pub tap_step: f64,
    pub scheme: Scheme,
    /// References at or below this magnitude are left out of MAPE.
    pub mape_floor: f64,
    /// Worker threads for re-solves; 0 picks the rayon default.
    pub workers: usize,
    pub solver: SolverConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            power_step: 1e-4,
            tap_step: 0.1,
            scheme: Scheme::Central,
            mape_floor: 1e-8,
            workers: 0,
            solver: SolverConfig {
                tolerance: 1e-12,
                ..SolverConfig::default()
            },
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_step > 0.0) || !(self.tap_step > 0.0) {
            return Err(Error::InvalidArgument(
                "oracle steps must be positive".into(),
            ));
        }
        if !(self.mape_floor >= 0.0) {
            return Err(Error::InvalidArgument(
                "MAPE floor must be non-negative".into(),
            ));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    P(usize),
    Q(usize),
    Tap(usize),
}

// Observed (magnitudes, angles) after a re-solve.
fn observe(
    net: &Network,
    op: &OperatingPoint,
    cfg: &OracleConfig,
    taps: &[f64],
    extra: Option<Injection>,
) -> Result<DVector<Complex64>> {
    let solver = cfg.solver.clone().warm(&op.voltages);
    Ok(solve_power_flow(net, taps, &solver, extra)?.voltages)
}

// `[dE; dθ]` from two voltage vectors and their input separation.
fn difference(hi: &DVector<Complex64>, lo: &DVector<Complex64>, span: f64) -> DVector<f64> {
    let n = hi.len();
    DVector::from_fn(2 * n, |k, _| {
        if k < n {
            (hi[k].norm() - lo[k].norm()) / span
        } else {
            (hi[k - n] / lo[k - n]).arg() / span
        }
    })
}

fn base(net: &Network, op: &OperatingPoint, cfg: &OracleConfig) -> Result<DVector<Complex64>> {
    observe(net, op, cfg, &op.taps, None)
}

fn fd_power(
    net: &Network,
    op: &OperatingPoint,
    node: usize,
    unit: Complex64,
    cfg: &OracleConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    if node >= net.node_count() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let h = cfg.power_step;
    let inj = |sign: f64| {
        Some(Injection {
            node,
            s: unit * (sign * h),
        })
    };
    let hi = observe(net, op, cfg, &op.taps, inj(1.0))?;
    match cfg.scheme {
        Scheme::Central => {
            let lo = observe(net, op, cfg, &op.taps, inj(-1.0))?;
            Ok(difference(&hi, &lo, 2.0 * h))
        }
        Scheme::Forward => Ok(difference(&hi, &base(net, op, cfg)?, h)),
    }
}

/// `[∂E/∂P_k; ∂θ/∂P_k]` by finite differences.
pub fn fd_sensitivity_p(
    net: &Network,
    op: &OperatingPoint,
    node: usize,
    cfg: &OracleConfig,
) -> Result<DVector<f64>> {
    fd_power(net, op, node, Complex64::new(1.0, 0.0), cfg)
}

/// `[∂E/∂Q_k; ∂θ/∂Q_k]` by finite differences.
pub fn fd_sensitivity_q(
    net: &Network,
    op: &OperatingPoint,
    node: usize,
    cfg: &OracleConfig,
) -> Result<DVector<f64>> {
    fd_power(net, op, node, Complex64::new(0.0, 1.0), cfg)
}

/// `[∂E/∂γ_s; ∂θ/∂γ_s]` by finite differences, one-sided at the tap limits.
pub fn fd_sensitivity_tap(
    net: &Network,
    op: &OperatingPoint,
    s: usize,
    cfg: &OracleConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let reg = net
        .model
        .regulators
        .get(s)
        .ok_or_else(|| Error::UnknownRegulator(format!("#{s}")))?;
    let h = cfg.tap_step;
    let gamma = op.taps[s];
    let at = |g: f64| -> Result<DVector<Complex64>> {
        let mut taps = op.taps.clone();
        taps[s] = g;
        observe(net, op, cfg, &taps, None)
    };
    let up_ok = gamma + h <= f64::from(reg.model.tap_max);
    let down_ok = gamma - h >= f64::from(reg.model.tap_min);
    match (cfg.scheme, up_ok, down_ok) {
        (Scheme::Central, true, true) => Ok(difference(&at(gamma + h)?, &at(gamma - h)?, 2.0 * h)),
        (_, true, _) => Ok(difference(&at(gamma + h)?, &base(net, op, cfg)?, h)),
        (_, false, true) => Ok(difference(&base(net, op, cfg)?, &at(gamma - h)?, h)),
        (_, false, false) => Err(Error::InvalidArgument(format!(
            "tap step {h} does not fit inside the range of regulator `{}`",
            reg.id
        ))),
    }
}

fn fd_column(
    net: &Network,
    op: &OperatingPoint,
    input: Input,
    cfg: &OracleConfig,
) -> Result<DVector<f64>> {
    match input {
        Input::P(k) => fd_sensitivity_p(net, op, k, cfg),
        Input::Q(k) => fd_sensitivity_q(net, op, k, cfg),
        Input::Tap(s) => fd_sensitivity_tap(net, op, s, cfg),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnFailure {
    pub input: String,
    pub message: String,
}

/// Finite-difference counterparts of the six sensitivity matrices.
#[derive(Debug, Clone)]
pub struct OracleEstimates {
    pub de_dp: DMatrix<f64>,
    pub dtheta_dp: DMatrix<f64>,
    pub de_dq: DMatrix<f64>,
    pub dtheta_dq: DMatrix<f64>,
    pub de_dgamma: DMatrix<f64>,
    pub dtheta_dgamma: DMatrix<f64>,
    /// Columns whose re-solves failed; their entries are NaN.
    pub failures: Vec<ColumnFailure>,
    pub seconds: f64,
}

impl OracleEstimates {
    pub fn all(&self) -> [&DMatrix<f64>; 6] {
        [
            &self.de_dp,
            &self.dtheta_dp,
            &self.de_dq,
            &self.dtheta_dq,
            &self.de_dgamma,
            &self.dtheta_dgamma,
        ]
    }

    /// Wraps analytical matrices, e.g. to compare a result with itself.
    pub fn from_matrices(m: &SensitivityMatrices) -> Self {
        OracleEstimates {
            de_dp: m.de_dp.clone(),
            dtheta_dp: m.dtheta_dp.clone(),
            de_dq: m.de_dq.clone(),
            dtheta_dq: m.dtheta_dq.clone(),
            de_dgamma: m.de_dgamma.clone(),
            dtheta_dgamma: m.dtheta_dgamma.clone(),
            failures: Vec::new(),
            seconds: 0.0,
        }
    }
}

fn input_label(net: &Network, input: Input) -> String {
    match input {
        Input::P(k) => format!("P@{}", net.index.node(k)),
        Input::Q(k) => format!("Q@{}", net.index.node(k)),
        Input::Tap(s) => format!("tap@{}", net.model.regulators[s].id),
    }
}

/// Runs every column of the oracle, in parallel up to `cfg.workers` threads.
///
/// Injections at slack nodes are absorbed by the slack, so those columns
/// are zero without a re-solve.
pub fn estimate_all(
    net: &Network,
    op: &OperatingPoint,
    cfg: &OracleConfig,
) -> Result<OracleEstimates> {
    cfg.validate()?;
    let started = Instant::now();
    let n = net.node_count();
    let r = net.regulator_count();
    let composite = net.index.composite();
    let inputs: Vec<Input> = composite
        .iter()
        .map(|&k| Input::P(k))
        .chain(composite.iter().map(|&k| Input::Q(k)))
        .chain((0..r).map(Input::Tap))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let columns: Vec<Result<DVector<f64>>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|&input| fd_column(net, op, input, cfg))
            .collect()
    });

    let mut est = OracleEstimates {
        de_dp: DMatrix::zeros(n, n),
        dtheta_dp: DMatrix::zeros(n, n),
        de_dq: DMatrix::zeros(n, n),
        dtheta_dq: DMatrix::zeros(n, n),
        de_dgamma: DMatrix::zeros(n, r),
        dtheta_dgamma: DMatrix::zeros(n, r),
        failures: Vec::new(),
        seconds: 0.0,
    };
    for (input, column) in inputs.into_iter().zip(columns) {
        let column = match column {
            Ok(c) => c,
            Err(err) => {
                est.failures.push(ColumnFailure {
                    input: input_label(net, input),
                    message: err.to_string(),
                });
                DVector::from_element(2 * n, f64::NAN)
            }
        };
        let (de, dt, col) = match input {
            Input::P(k) => (&mut est.de_dp, &mut est.dtheta_dp, k),
            Input::Q(k) => (&mut est.de_dq, &mut est.dtheta_dq, k),
            Input::Tap(s) => (&mut est.de_dgamma, &mut est.dtheta_dgamma, s),
        };
        de.set_column(col, &column.rows(0, n));
        dt.set_column(col, &column.rows(n, n));
    }
    est.seconds = started.elapsed().as_secs_f64();
    Ok(est)
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstEntry {
    pub row: String,
    pub column: String,
    pub analytical: f64,
    pub reference: f64,
    pub percent_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixReport {
    pub name: String,
    pub rows: usize,
    pub columns: usize,
    /// Mean absolute percentage error over entries with `|reference| > floor`.
    pub mape_percent: f64,
    pub mae: f64,
    pub max_abs_error: f64,
    pub included: usize,
    /// Entries left out of MAPE because the reference is near zero.
    pub excluded: usize,
    /// Entries skipped because either side is not finite.
    pub non_finite: usize,
    pub worst: Option<WorstEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub matrices: Vec<MatrixReport>,
    pub mape_floor: f64,
    pub analytical_seconds: f64,
    pub oracle_seconds: f64,
    pub failures: Vec<ColumnFailure>,
}

impl ValidationReport {
    pub fn matrix(&self, name: &str) -> Option<&MatrixReport> {
        self.matrices.iter().find(|m| m.name == name)
    }

    pub fn max_mape(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| m.mape_percent)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>11} {:>11} {:>11} {:>8} {:>8}",
            "matrix", "MAPE %", "MAE", "max abs", "used", "floored"
        )?;
        for m in &self.matrices {
            writeln!(
                f,
                "{:<14} {:>11.4e} {:>11.4e} {:>11.4e} {:>8} {:>8}",
                m.name, m.mape_percent, m.mae, m.max_abs_error, m.included, m.excluded
            )?;
        }
        for m in &self.matrices {
            if let Some(w) = &m.worst {
                writeln!(
                    f,
                    "worst {:<14} [{} / {}] analytical {:.6e} reference {:.6e} ({:.3e} %)",
                    m.name, w.row, w.column, w.analytical, w.reference, w.percent_error
                )?;
            }
        }
        for fail in &self.failures {
            writeln!(f, "failed column {}: {}", fail.input, fail.message)?;
        }
        write!(
            f,
            "analytical {:.3} s, oracle {:.3} s",
            self.analytical_seconds, self.oracle_seconds
        )
    }
}

fn compare_matrix(
    name: &str,
    a: &DMatrix<f64>,
    r: &DMatrix<f64>,
    rows: &[String],
    cols: &[String],
    floor: f64,
) -> Result<MatrixReport> {
    if a.shape() != r.shape() {
        return Err(Error::ShapeMismatch {
            what: name.to_string(),
            left: a.shape(),
            right: r.shape(),
        });
    }
    let (mut pct_sum, mut abs_sum) = (0.0, 0.0);
    let (mut included, mut excluded, mut non_finite, mut counted) = (0, 0, 0, 0);
    let mut max_abs: f64 = 0.0;
    let mut worst: Option<WorstEntry> = None;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let (av, rv) = (a[(i, j)], r[(i, j)]);
            if !av.is_finite() || !rv.is_finite() {
                non_finite += 1;
                continue;
            }
            let err = (av - rv).abs();
            abs_sum += err;
            counted += 1;
            max_abs = max_abs.max(err);
            if rv.abs() > floor {
                let pct = 100.0 * err / rv.abs();
                pct_sum += pct;
                included += 1;
                if worst.as_ref().is_none_or(|w| pct > w.percent_error) {
                    worst = Some(WorstEntry {
                        row: rows.get(i).cloned().unwrap_or_else(|| i.to_string()),
                        column: cols.get(j).cloned().unwrap_or_else(|| j.to_string()),
                        analytical: av,
                        reference: rv,
                        percent_error: pct,
                    });
                }
            } else {
                excluded += 1;
            }
        }
    }
    Ok(MatrixReport {
        name: name.to_string(),
        rows: a.nrows(),
        columns: a.ncols(),
        mape_percent: if included > 0 {
            pct_sum / included as f64
        } else {
            0.0
        },
        mae: if counted > 0 {
            abs_sum / counted as f64
        } else {
            0.0
        },
        max_abs_error: max_abs,
        included,
        excluded,
        non_finite,
        worst,
    })
}

/// Per-matrix MAPE and MAE of analytical results against oracle estimates.
pub fn compare(
    net: &Network,
    analytical: &SensitivityMatrices,
    oracle: &OracleEstimates,
    mape_floor: f64,
) -> Result<ValidationReport> {
    let nodes: Vec<String> = net.index.nodes().iter().map(|n| n.to_string()).collect();
    let regs = net.model.regulator_ids();
    let mut matrices = Vec::with_capacity(6);
    for (k, (a, r)) in analytical.all().into_iter().zip(oracle.all()).enumerate() {
        let cols = if k < 4 { &nodes } else { &regs };
        matrices.push(compare_matrix(
            MATRIX_NAMES[k],
            a,
            r,
            &nodes,
            cols,
            mape_floor,
        )?);
    }
    Ok(ValidationReport {
        matrices,
        mape_floor,
        analytical_seconds: analytical.diagnostics.seconds,
        oracle_seconds: oracle.seconds,
        failures: oracle.failures.clone(),
    })
}

/// Analytical solve, oracle estimates and their comparison in one call.
pub fn validate(
    net: &Network,
    op: &OperatingPoint,
    cfg: &OracleConfig,
) -> Result<(SensitivityMatrices, ValidationReport)> {
    let sens = crate::sensitivity::solve_all(net, op)?;
    let est = estimate_all(net, op, cfg)?;
    let report = compare(net, &sens, &est, cfg.mape_floor)?;
    Ok((sens, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_feeder;
    use crate::sensitivity::solve_all;

    fn balanced_two_bus() -> Network {
        let text = r#"{
            "bases": {"s_base_kva": 1000, "kv_ln": 2.4},
            "buses": [{"name": "s", "phases": ["a", "b", "c"]}, {"name": "r", "phases": ["a", "b", "c"]}],
            "lines": [{"id": "l", "from": "s", "to": "r", "phases": ["a", "b", "c"], "length": 1.0,
                "r": [[0.3, 0.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.0, 0.3]],
                "x": [[0.9, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 0.9]]}],
            "loads": [{"bus": "r", "connection": "wye",
                "powers": {"a": [200, 80], "b": [200, 80], "c": [200, 80]}}],
            "slack": [{"bus": "s"}]
        }"#;
        Network::new(parse_feeder(text).unwrap()).unwrap()
    }

    fn solve(net: &Network) -> OperatingPoint {
        solve_power_flow(net, &[], &SolverConfig::default(), None).unwrap()
    }

    #[test]
    fn load_only_at_slack_gives_zero_sensitivities() {
        let text = r#"{"bases": {"s_base_kva": 1000, "kv_ln": 2.4},
            "buses": [{"name": "s", "phases": ["a", "b", "c"]}],
            "loads": [{"bus": "s", "connection": "wye", "powers": {"a": [200, 80], "b": [100, 10]}}],
            "slack": [{"bus": "s"}]}"#;
        let net = Network::new(parse_feeder(text).unwrap()).unwrap();
        let op = solve(&net);
        let est = estimate_all(&net, &op, &OracleConfig::default()).unwrap();
        for m in est.all() {
            assert!(m.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn phase_symmetric_feeder_gives_equal_phase_columns() {
        let net = balanced_two_bus();
        let op = solve(&net);
        let cfg = OracleConfig::default();
        let cols: Vec<_> = (3..6)
            .map(|k| fd_sensitivity_p(&net, &op, k, &cfg).unwrap())
            .collect();
        for (k, col) in cols.iter().enumerate() {
            assert!((col[3 + k] - cols[0][3]).abs() < 1e-8);
            assert!((col[9 + k] - cols[0][9]).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_inputs_score_zero() {
        let net = balanced_two_bus();
        let op = solve(&net);
        let sens = solve_all(&net, &op).unwrap();
        let report = compare(&net, &sens, &OracleEstimates::from_matrices(&sens), 1e-8).unwrap();
        assert!(report
            .matrices
            .iter()
            .all(|m| m.mape_percent == 0.0 && m.mae == 0.0));
        assert!(report.matrix("dE_dP").unwrap().excluded > 0);
    }

    #[test]
    fn corrupted_entry_is_the_worst_offender() {
        let net = balanced_two_bus();
        let op = solve(&net);
        let sens = solve_all(&net, &op).unwrap();
        let mut est = OracleEstimates::from_matrices(&sens);
        est.dtheta_dq[(4, 4)] *= 2.0;
        let report = compare(&net, &sens, &est, 1e-8).unwrap();
        let worst = report.matrix("dTheta_dQ").unwrap().worst.clone().unwrap();
        assert_eq!((worst.row.as_str(), worst.column.as_str()), ("r.b", "r.b"));
        assert!((worst.percent_error - 50.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = balanced_two_bus();
        let op = solve(&net);
        let sens = solve_all(&net, &op).unwrap();
        let mut est = OracleEstimates::from_matrices(&sens);
        est.de_dp = DMatrix::zeros(2, 2);
        assert!(matches!(
            compare(&net, &sens, &est, 1e-8),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn oracle_is_deterministic() {
        let net = balanced_two_bus();
        let op = solve(&net);
        let cfg = OracleConfig {
            workers: 3,
            ..Default::default()
        };
        let a = estimate_all(&net, &op, &cfg).unwrap();
        let b = estimate_all(&net, &op, &cfg).unwrap();
        for (x, y) in a.all().into_iter().zip(b.all()) {
            assert_eq!(x, y);
        }
    }
}

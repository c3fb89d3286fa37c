//! Analytical sensitivity matrices.
//!
//! Writing the nodal balance as `H(E, θ) = E̲ ⊙ (Y·E) − S̲_inj(E)`, a fictitious
//! source at each node makes `H` equal to `P − jQ` of that source. Its
//! differential is
//!
//! ```text
//!   dH = C · dE + j·D · dθ
//!
//!   C = Diag(A̲ ⊙ Y·E) + Diag(E̲)·Y·Diag(A) + Π̲·Diag(A̲) + j(Ψ + Ω)
//!   D = −Diag(E̲ ⊙ Y·E) + Diag(E̲)·Y·Diag(E) − Π̲·Diag(E̲)
//! ```
//!
//! with `A = e^{jθ}`, `Π` the Jacobian of the Delta-to-Wye powers and `Ψ`, `Ω`
//! the volt-var slopes. Splitting into real and imaginary parts gives one real
//! `2N×2N` matrix shared by the P, Q and tap right-hand sides. Slack rows are
//! replaced by unit rows so that slack magnitudes and angles stay fixed.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::composite::{omega_lambda_matrices, pi_matrix, psi_matrix, Der1Phase, VoltVarCurve};
use crate::error::{Error, Result};
use crate::netmodel::{assemble_d_delta_y, Network, NetworkModel};
use crate::powerflow::OperatingPoint;

/// Condition estimate above which results are flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Finite droop standing in for an infinite one when emulating a PV bus.
pub const PV_DEFAULT_DROOP: f64 = -1e6;

fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// The seven complex terms of `C` and `D` at one operating point.
#[derive(Debug, Clone)]
pub struct SystemBlocks {
    pub c1: DMatrix<Complex64>,
    pub c2: DMatrix<Complex64>,
    pub c3: DMatrix<Complex64>,
    pub c4: DMatrix<Complex64>,
    pub d1: DMatrix<Complex64>,
    pub d2: DMatrix<Complex64>,
    pub d3: DMatrix<Complex64>,
    /// Real `[[Re C, −Im D], [Im C, Re D]]`, before slack replacement.
    pub raw: DMatrix<f64>,
    /// `raw` with slack rows replaced; equals `raw` until [`apply_slack`] runs.
    pub matrix: DMatrix<f64>,
    pub slack: Vec<usize>,
}

impl SystemBlocks {
    pub fn node_count(&self) -> usize {
        self.c1.nrows()
    }

    pub fn c(&self) -> DMatrix<Complex64> {
        &self.c1 + &self.c2 + &self.c3 + &self.c4
    }

    pub fn d(&self) -> DMatrix<Complex64> {
        &self.d1 + &self.d2 + &self.d3
    }

    fn from_terms(terms: [DMatrix<Complex64>; 7]) -> Self {
        let [c1, c2, c3, c4, d1, d2, d3] = terms;
        let c = &c1 + &c2 + &c3 + &c4;
        let d = &d1 + &d2 + &d3;
        let raw = augmented_matrix(&c, &d);
        SystemBlocks {
            matrix: raw.clone(),
            raw,
            c1,
            c2,
            c3,
            c4,
            d1,
            d2,
            d3,
            slack: Vec::new(),
        }
    }
}

fn diag(v: impl Iterator<Item = Complex64>, n: usize) -> DMatrix<Complex64> {
    DMatrix::from_diagonal(&DVector::from_iterator(n, v))
}

fn component_terms(
    net: &Network,
    y: &DMatrix<Complex64>,
    e: &DVector<Complex64>,
) -> Result<[DMatrix<Complex64>; 7]> {
    let n = e.len();
    if let Some(i) = e.iter().position(|v| v.norm() == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "zero voltage at node {} has no defined angle",
            net.index.node(i)
        )));
    }
    let a = e.map(|v| v / v.norm());
    let ye = y * e;
    let e_conj = e.map(|v| v.conj());
    let pi_conj = pi_matrix(&net.model, &net.index, e)?.map(|v| v.conj());
    let psi = psi_matrix(&net.model, &net.index, e);
    let (omega, _) = omega_lambda_matrices(&net.model, &net.index, e)?;

    let c1 = diag((0..n).map(|i| a[i].conj() * ye[i]), n);
    let c2 = diag(e_conj.iter().copied(), n) * y * diag(a.iter().copied(), n);
    let c3 = &pi_conj * diag(a.iter().map(|v| v.conj()), n);
    let c4 = (psi + omega).map(|v| c64(0.0, v));
    let d1 = diag((0..n).map(|i| -e_conj[i] * ye[i]), n);
    let d2 = diag(e_conj.iter().copied(), n) * y * diag(e.iter().copied(), n);
    let d3 = -(&pi_conj * diag(e_conj.iter().copied(), n));
    Ok([c1, c2, c3, c4, d1, d2, d3])
}

/// `C` and `D` at voltages `e` for admittance `y`.
pub fn jacobian_blocks(
    net: &Network,
    y: &DMatrix<Complex64>,
    e: &DVector<Complex64>,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let [c1, c2, c3, c4, d1, d2, d3] = component_terms(net, y, e)?;
    Ok((c1 + c2 + c3 + c4, d1 + d2 + d3))
}

/// Real form `[[Re C, −Im D], [Im C, Re D]]` acting on `[dE; dθ]`.
pub fn augmented_matrix(c: &DMatrix<Complex64>, d: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for k in 0..n {
            a[(r, k)] = c[(r, k)].re;
            a[(r, n + k)] = -d[(r, k)].im;
            a[(n + r, k)] = c[(r, k)].im;
            a[(n + r, n + k)] = d[(r, k)].re;
        }
    }
    a
}

/// Overwrites rows `i` and `N+i` of every slack node with unit rows.
pub fn replace_slack_rows(a: &mut DMatrix<f64>, n: usize, slack: &[usize]) {
    for &i in slack {
        for r in [i, n + i] {
            a.row_mut(r).fill(0.0);
            a[(r, r)] = 1.0;
        }
    }
}

/// System terms at a converged operating point, with slack rows replaced.
pub fn build_system_blocks(net: &Network, op: &OperatingPoint) -> Result<SystemBlocks> {
    let y = net.y(&op.taps)?;
    let blocks = SystemBlocks::from_terms(component_terms(net, &y, &op.voltages)?);
    Ok(apply_slack(blocks, net.index.slack()))
}

/// Replaces the slack rows of `blocks.matrix`, starting from `blocks.raw`.
pub fn apply_slack(mut blocks: SystemBlocks, slack: &[usize]) -> SystemBlocks {
    let n = blocks.node_count();
    blocks.matrix = blocks.raw.clone();
    replace_slack_rows(&mut blocks.matrix, n, slack);
    blocks.slack = slack.to_vec();
    blocks
}

/// The same system with the Delta-load and volt-var terms forced to zero.
pub fn classical_only(blocks: &SystemBlocks) -> SystemBlocks {
    let n = blocks.node_count();
    let zero = DMatrix::zeros(n, n);
    let rebuilt = SystemBlocks::from_terms([
        blocks.c1.clone(),
        blocks.c2.clone(),
        zero.clone(),
        zero.clone(),
        blocks.d1.clone(),
        blocks.d2.clone(),
        zero,
    ]);
    apply_slack(rebuilt, &blocks.slack)
}

fn zero_slack_rows(b: &mut DMatrix<f64>, n: usize, slack: &[usize]) {
    for &i in slack {
        b.row_mut(i).fill(0.0);
        b.row_mut(n + i).fill(0.0);
    }
}

/// Unit active injection at each node: `[I; 0]` with slack rows zeroed.
pub fn rhs_for_p(n: usize, slack: &[usize]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2 * n, n);
    for k in 0..n {
        b[(k, k)] = 1.0;
    }
    zero_slack_rows(&mut b, n, slack);
    b
}

/// Unit reactive injection at each node: `[0; −I]` with slack rows zeroed.
pub fn rhs_for_q(n: usize, slack: &[usize]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2 * n, n);
    for k in 0..n {
        b[(n + k, k)] = -1.0;
    }
    zero_slack_rows(&mut b, n, slack);
    b
}

/// One column per regulator: `−E̲ ⊙ (∂δY_s/∂γ · E)` split into `[Re; Im]`.
pub fn rhs_for_taps(net: &Network, op: &OperatingPoint) -> Result<DMatrix<f64>> {
    let n = net.node_count();
    let e = &op.voltages;
    let mut b = DMatrix::zeros(2 * n, net.regulator_count());
    for (s, &gamma) in op.taps.iter().enumerate() {
        let dy = assemble_d_delta_y(&net.model, &net.index, s, gamma)?;
        let dye = dy * e;
        for i in 0..n {
            let f = -e[i].conj() * dye[i];
            b[(i, s)] = f.re;
            b[(n + i, s)] = f.im;
        }
    }
    zero_slack_rows(&mut b, n, net.index.slack());
    Ok(b)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    /// `‖A·X − B‖∞` for the P, Q and tap solves.
    pub residual_p: f64,
    pub residual_q: f64,
    pub residual_tap: f64,
    /// 1-norm condition estimate of the slack-replaced matrix.
    pub condition_estimate: f64,
    pub ill_conditioned: bool,
    pub seconds: f64,
}

impl SolveDiagnostics {
    pub fn max_residual(&self) -> f64 {
        self.residual_p.max(self.residual_q).max(self.residual_tap)
    }
}

/// The six sensitivity matrices. Angles are in radians.
#[derive(Debug, Clone)]
pub struct SensitivityMatrices {
    pub de_dp: DMatrix<f64>,
    pub dtheta_dp: DMatrix<f64>,
    pub de_dq: DMatrix<f64>,
    pub dtheta_dq: DMatrix<f64>,
    pub de_dgamma: DMatrix<f64>,
    pub dtheta_dgamma: DMatrix<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Stable names of the six matrices, in [`SensitivityMatrices::all`] order.
pub const MATRIX_NAMES: [&str; 6] = [
    "dE_dP",
    "dTheta_dP",
    "dE_dQ",
    "dTheta_dQ",
    "dE_dGamma",
    "dTheta_dGamma",
];

impl SensitivityMatrices {
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

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &DMatrix<f64>)> {
        MATRIX_NAMES.into_iter().zip(self.all())
    }

    pub fn all_finite(&self) -> bool {
        self.all().iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Solve with one step of iterative refinement; returns the solution and its residual.
fn solve_refined(
    a: &DMatrix<f64>,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let singular = || Error::SingularSystem {
        what: "sensitivity",
        condition: None,
    };
    let mut x = lu.solve(b).ok_or_else(singular)?;
    let r = b - a * &x;
    x += lu.solve(&r).ok_or_else(singular)?;
    let residual = inf_norm(&(a * &x - b));
    Ok((x, residual))
}

// Slack rows are unit rows with zero right-hand side, so their solution is
// zero; pivoting can leave round-off there, which is cleared.
fn split(x: &DMatrix<f64>, n: usize, slack: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (mut e, mut t) = (x.rows(0, n).into_owned(), x.rows(n, n).into_owned());
    for &i in slack {
        e.row_mut(i).fill(0.0);
        t.row_mut(i).fill(0.0);
    }
    (e, t)
}

/// All six matrices from a single factorization of the system matrix.
pub fn solve_with_blocks(
    net: &Network,
    op: &OperatingPoint,
    blocks: &SystemBlocks,
) -> Result<SensitivityMatrices> {
    let started = Instant::now();
    let n = blocks.node_count();
    let slack = &blocks.slack;
    let a = &blocks.matrix;
    let lu = a.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::SingularSystem {
            what: "sensitivity",
            condition: None,
        });
    }
    let (xp, residual_p) = solve_refined(a, &lu, &rhs_for_p(n, slack))?;
    let (xq, residual_q) = solve_refined(a, &lu, &rhs_for_q(n, slack))?;
    let (xt, residual_tap) = solve_refined(a, &lu, &rhs_for_taps(net, op)?)?;

    let condition_estimate = one_norm(a) * one_norm(&xp).max(one_norm(&xq));
    if !condition_estimate.is_finite() {
        return Err(Error::SingularSystem {
            what: "sensitivity",
            condition: Some(condition_estimate),
        });
    }
    let (de_dp, dtheta_dp) = split(&xp, n, slack);
    let (de_dq, dtheta_dq) = split(&xq, n, slack);
    let (de_dgamma, dtheta_dgamma) = split(&xt, n, slack);
    Ok(SensitivityMatrices {
        de_dp,
        dtheta_dp,
        de_dq,
        dtheta_dq,
        de_dgamma,
        dtheta_dgamma,
        diagnostics: SolveDiagnostics {
            residual_p,
            residual_q,
            residual_tap,
            condition_estimate,
            ill_conditioned: condition_estimate > ILL_CONDITIONED,
            seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Builds the system at `op` and solves for all six matrices.
pub fn solve_all(net: &Network, op: &OperatingPoint) -> Result<SensitivityMatrices> {
    let blocks = build_system_blocks(net, op)?;
    solve_with_blocks(net, op, &blocks)
}

/// Turns `bus` into a voltage-controlled bus: loads and DERs are removed and
/// one single-phase DER per phase holds `v_set` through a stiff volt-var droop.
///
/// `p_total` (p.u.) is shared evenly between the phases. A droop of `m` turns
/// voltage round-off into reactive mismatch of about `|m|·1e-16`, so stiff
/// buses need a looser power flow tolerance than the default.
pub fn make_pv_bus(
    model: &NetworkModel,
    bus: &str,
    p_total: f64,
    v_set: f64,
    droop: f64,
) -> Result<NetworkModel> {
    let mut out = model.clone();
    let target = out
        .bus_mut(bus)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown bus `{bus}`")))?;
    let curve = VoltVarCurve::new(droop, v_set);
    curve.validate()?;
    let share = p_total / target.phases.len() as f64;
    target.composite = Default::default();
    target.composite.ders_1ph = target
        .phases
        .iter()
        .map(|&phase| Der1Phase {
            phase,
            p: share,
            q: 0.0,
            curve,
        })
        .collect();
    Ok(out)
}

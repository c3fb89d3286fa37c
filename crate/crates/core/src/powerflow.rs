//! Unbalanced power flow.
//!
//! The default engine is a fixed-point current-injection sweep over the
//! non-slack nodes:
//!
//! ```text
//!   E_C ← Y_CC⁻¹ · (S̲_inj(E) / E̲ − Y_CI · E_I)
//! ```
//!
//! with `Y_CC` factorized once per solve. Volt-var output is recomputed from
//! the full piecewise curve on every sweep. Very stiff droops (PV-bus
//! emulation) make the sweep diverge; [`Method::Auto`] then retries with a
//! polar Newton iteration built on the same Jacobian as the sensitivity solve.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::composite::conj_injections;
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::sensitivity::{augmented_matrix, jacobian_blocks, replace_slack_rows};

/// Mismatch beyond which an iteration is treated as diverged.
const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CurrentInjection,
    Newton,
    /// Current injection, falling back to Newton on failure.
    Auto,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Largest acceptable per-node complex power mismatch (p.u.).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Under-relaxation of the current-injection update, in `[0.1, 1]`.
    pub relaxation: f64,
    pub method: Method,
    /// Initial voltages; slack entries are overwritten by their specification.
    pub warm_start: Option<DVector<Complex64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            max_iterations: 200,
            relaxation: 1.0,
            method: Method::Auto,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if !(0.1..=1.0).contains(&self.relaxation) {
            return Err(Error::InvalidArgument(format!(
                "relaxation {} outside [0.1, 1]",
                self.relaxation
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn warm(mut self, start: &DVector<Complex64>) -> Self {
        self.warm_start = Some(start.clone());
        self
    }
}

/// Extra constant-power injection (p.u., generator convention) at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub node: usize,
    pub s: Complex64,
}

#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub voltages: DVector<Complex64>,
    pub taps: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
    /// Engine that produced the solution.
    pub method: Method,
}

impl OperatingPoint {
    pub fn magnitudes(&self) -> DVector<f64> {
        self.voltages.map(|v| v.norm())
    }

    /// Phase angles in radians.
    pub fn angles(&self) -> DVector<f64> {
        self.voltages.map(|v| v.arg())
    }
}

/// Complex power residual `E̲ ⊙ (Y·E) − S̲_inj(E)` at every node.
///
/// Extra injections enter `S_inj`. At slack nodes the residual is the power
/// the slack supplies.
pub fn residual(
    net: &Network,
    y: &DMatrix<Complex64>,
    e: &DVector<Complex64>,
    extra: Option<Injection>,
) -> Result<DVector<Complex64>> {
    let mut s_inj = conj_injections(&net.model, &net.index, e)?;
    if let Some(inj) = extra {
        s_inj[inj.node] += inj.s.conj();
    }
    let ye = y * e;
    Ok(DVector::from_fn(e.len(), |i, _| {
        e[i].conj() * ye[i] - s_inj[i]
    }))
}

fn max_mismatch(net: &Network, r: &DVector<Complex64>) -> f64 {
    net.index
        .composite()
        .iter()
        .map(|&i| r[i].norm())
        .fold(0.0, |a, b| {
            if b.is_nan() || a.is_nan() {
                f64::NAN
            } else {
                a.max(b)
            }
        })
}

/// Per-node power mismatch magnitude; zero at slack nodes.
pub fn power_mismatch(net: &Network, e: &DVector<Complex64>, taps: &[f64]) -> Result<DVector<f64>> {
    let y = net.y(taps)?;
    let r = residual(net, &y, e, None)?;
    Ok(DVector::from_fn(e.len(), |i, _| {
        if net.index.is_slack(i) {
            0.0
        } else {
            r[i].norm()
        }
    }))
}

/// Voltages of the unloaded network: slack phasors propagated through `Y`.
pub fn flat_start(net: &Network, y: &DMatrix<Complex64>) -> Result<DVector<Complex64>> {
    let mut e = net.slack_voltages();
    let c = net.index.composite();
    if c.is_empty() {
        return Ok(e);
    }
    let s = net.index.slack();
    let ycc = y.select_rows(c).select_columns(c);
    let yci = y.select_rows(c).select_columns(s);
    let ei = DVector::from_iterator(s.len(), s.iter().map(|&i| e[i]));
    let lu = ycc.lu();
    let ec = lu.solve(&(-(yci * ei))).ok_or(Error::SingularSystem {
        what: "non-slack admittance",
        condition: None,
    })?;
    for (k, &i) in c.iter().enumerate() {
        e[i] = ec[k];
    }
    Ok(e)
}

fn initial_voltages(
    net: &Network,
    y: &DMatrix<Complex64>,
    config: &SolverConfig,
) -> Result<DVector<Complex64>> {
    match &config.warm_start {
        Some(start) => {
            if start.len() != net.node_count() {
                return Err(Error::InvalidArgument(format!(
                    "warm start has {} entries for {} nodes",
                    start.len(),
                    net.node_count()
                )));
            }
            let mut e = start.clone();
            let slack = net.slack_voltages();
            for &i in net.index.slack() {
                e[i] = slack[i];
            }
            Ok(e)
        }
        None => flat_start(net, y),
    }
}

/// Solves the power flow at the given taps with an optional extra injection.
pub fn solve_power_flow(
    net: &Network,
    taps: &[f64],
    config: &SolverConfig,
    extra: Option<Injection>,
) -> Result<OperatingPoint> {
    config.validate()?;
    if let Some(inj) = extra {
        if inj.node >= net.node_count() {
            return Err(Error::InvalidArgument(format!(
                "injection node {} out of range",
                inj.node
            )));
        }
    }
    let y = net.y(taps)?;
    let start = initial_voltages(net, &y, config)?;
    let (voltages, iterations, mismatch, method) = match config.method {
        Method::CurrentInjection => {
            let (e, it, mm) = current_injection(net, &y, start, config, extra)?;
            (e, it, mm, Method::CurrentInjection)
        }
        Method::Newton => {
            let (e, it, mm) = newton(net, &y, start, config, extra)?;
            (e, it, mm, Method::Newton)
        }
        Method::Auto => match current_injection(net, &y, start.clone(), config, extra) {
            Ok((e, it, mm)) => (e, it, mm, Method::CurrentInjection),
            Err(Error::NonConvergence {
                iterations: ci_it, ..
            }) => {
                let (e, it, mm) = newton(net, &y, start, config, extra)?;
                (e, ci_it + it, mm, Method::Newton)
            }
            Err(e) => return Err(e),
        },
    };
    Ok(OperatingPoint {
        voltages,
        taps: taps.to_vec(),
        iterations,
        mismatch,
        method,
    })
}

fn current_injection(
    net: &Network,
    y: &DMatrix<Complex64>,
    mut e: DVector<Complex64>,
    config: &SolverConfig,
    extra: Option<Injection>,
) -> Result<(DVector<Complex64>, usize, f64)> {
    let c = net.index.composite();
    let s = net.index.slack();
    let mut mismatch = max_mismatch(net, &residual(net, y, &e, extra)?);
    if c.is_empty() || mismatch <= config.tolerance {
        return Ok((e, 0, mismatch));
    }
    let ycc = y.select_rows(c).select_columns(c);
    let yci = y.select_rows(c).select_columns(s);
    let ei = DVector::from_iterator(s.len(), s.iter().map(|&i| e[i]));
    let slack_current = yci * ei;
    let lu = ycc.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularSystem {
            what: "non-slack admittance",
            condition: None,
        });
    }
    let alpha = config.relaxation;
    for it in 1..=config.max_iterations {
        let mut s_inj = conj_injections(&net.model, &net.index, &e)?;
        if let Some(inj) = extra {
            s_inj[inj.node] += inj.s.conj();
        }
        let rhs = DVector::from_fn(c.len(), |k, _| {
            s_inj[c[k]] / e[c[k]].conj() - slack_current[k]
        });
        let ec = lu.solve(&rhs).ok_or(Error::SingularSystem {
            what: "non-slack admittance",
            condition: None,
        })?;
        for (k, &i) in c.iter().enumerate() {
            e[i] = e[i] * (1.0 - alpha) + ec[k] * alpha;
        }
        mismatch = max_mismatch(net, &residual(net, y, &e, extra)?);
        if mismatch <= config.tolerance {
            return Ok((e, it, mismatch));
        }
        if !mismatch.is_finite() || mismatch > DIVERGENCE_LIMIT {
            return Err(Error::NonConvergence {
                iterations: it,
                mismatch,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        mismatch,
    })
}

fn newton(
    net: &Network,
    y: &DMatrix<Complex64>,
    mut e: DVector<Complex64>,
    config: &SolverConfig,
    extra: Option<Injection>,
) -> Result<(DVector<Complex64>, usize, f64)> {
    let n = net.node_count();
    let slack = net.index.slack();
    let mut r = residual(net, y, &e, extra)?;
    let mut mismatch = max_mismatch(net, &r);
    if mismatch <= config.tolerance {
        return Ok((e, 0, mismatch));
    }
    for it in 1..=config.max_iterations {
        let (cm, dm) = jacobian_blocks(net, y, &e)?;
        let mut a = augmented_matrix(&cm, &dm);
        replace_slack_rows(&mut a, n, slack);
        let mut rhs = DVector::from_fn(2 * n, |k, _| if k < n { -r[k].re } else { -r[k - n].im });
        for &i in slack {
            rhs[i] = 0.0;
            rhs[n + i] = 0.0;
        }
        let dx = a.lu().solve(&rhs).ok_or(Error::SingularSystem {
            what: "power flow Jacobian",
            condition: None,
        })?;
        for i in 0..n {
            if net.index.is_slack(i) {
                continue;
            }
            let mag = e[i].norm() + dx[i];
            let ang = e[i].arg() + dx[n + i];
            e[i] = Complex64::from_polar(mag, ang);
        }
        r = residual(net, y, &e, extra)?;
        mismatch = max_mismatch(net, &r);
        if mismatch <= config.tolerance {
            return Ok((e, it, mismatch));
        }
        if !mismatch.is_finite() || mismatch > DIVERGENCE_LIMIT {
            return Err(Error::NonConvergence {
                iterations: it,
                mismatch,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        mismatch,
    })
}

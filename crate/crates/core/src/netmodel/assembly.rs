use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{NetworkModel, NodeId, NodeIndexMap};
use crate::error::{Error, Result};

/// Adds `primitive` into `y` at the given nodes.
pub fn stamp(
    y: &mut DMatrix<Complex64>,
    index: &NodeIndexMap,
    element: &str,
    nodes: &[&NodeId],
    primitive: &DMatrix<Complex64>,
) -> Result<()> {
    if primitive.nrows() != nodes.len() || primitive.ncols() != nodes.len() {
        return Err(Error::DimensionMismatch {
            element: element.to_string(),
            expected: nodes.len(),
            actual: primitive.nrows().max(primitive.ncols()),
        });
    }
    let idx = nodes
        .iter()
        .map(|n| index.require(n))
        .collect::<Result<Vec<_>>>()?;
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            y[(i, j)] += primitive[(a, b)];
        }
    }
    Ok(())
}

/// Series two-port `[[y+sh, -y], [-y, y+sh]]` for an n-phase branch.
pub fn two_port_primitive(
    y_series: &DMatrix<Complex64>,
    y_shunt_half: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let n = y_series.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n))
        .copy_from(&(y_series + y_shunt_half));
    m.view_mut((n, n), (n, n))
        .copy_from(&(y_series + y_shunt_half));
    m.view_mut((0, n), (n, n)).copy_from(&(-y_series));
    m.view_mut((n, 0), (n, n)).copy_from(&(-y_series));
    m
}

/// Delta(primary)-grounded-Wye(secondary) transformer primitive, nodes
/// ordered `[A, B, C, a, b, c]`, with per-phase leakage admittance `y` and
/// nominal turns on a per-unit basis.
pub fn delta_wye_primitive(y: Complex64) -> DMatrix<Complex64> {
    let s3 = 3f64.sqrt();
    let ypp = [[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]];
    let yps = [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]];
    let mut m = DMatrix::zeros(6, 6);
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = y * ypp[r][c] / 3.0;
            m[(r, 3 + c)] = y * yps[r][c] / s3;
            m[(3 + c, r)] = y * yps[r][c] / s3;
        }
        m[(3 + r, 3 + r)] = y;
    }
    m
}

fn stamp_branches(
    y: &mut DMatrix<Complex64>,
    model: &NetworkModel,
    index: &NodeIndexMap,
) -> Result<()> {
    for branch in &model.branches {
        let nodes: Vec<&NodeId> = branch.nodes().collect();
        stamp(y, index, &branch.id, &nodes, &branch.primitive)?;
    }
    Ok(())
}

fn check_tap_count(model: &NetworkModel, taps: &[f64]) -> Result<()> {
    if taps.len() != model.regulators.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tap value(s) given for {} regulator(s)",
            taps.len(),
            model.regulators.len()
        )));
    }
    Ok(())
}

/// Y° with every regulator at its nominal tap.
pub fn assemble_y_nominal(
    model: &NetworkModel,
    index: &NodeIndexMap,
) -> Result<DMatrix<Complex64>> {
    let n = index.len();
    let mut y = DMatrix::zeros(n, n);
    stamp_branches(&mut y, model, index)?;
    for reg in &model.regulators {
        let nodes: Vec<&NodeId> = reg.nodes().collect();
        stamp(&mut y, index, &reg.id, &nodes, &reg.model.y_reg(0.0)?)?;
    }
    Ok(y)
}

/// Regulator increment δY at the given taps.
pub fn assemble_delta_y(
    model: &NetworkModel,
    index: &NodeIndexMap,
    taps: &[f64],
) -> Result<DMatrix<Complex64>> {
    check_tap_count(model, taps)?;
    let n = index.len();
    let mut y = DMatrix::zeros(n, n);
    for (reg, &gamma) in model.regulators.iter().zip(taps) {
        let nodes: Vec<&NodeId> = reg.nodes().collect();
        stamp(&mut y, index, &reg.id, &nodes, &reg.model.delta_y(gamma)?)?;
    }
    Ok(y)
}

/// Y with regulators stamped directly at the given taps.
pub fn assemble_y(
    model: &NetworkModel,
    index: &NodeIndexMap,
    taps: &[f64],
) -> Result<DMatrix<Complex64>> {
    check_tap_count(model, taps)?;
    let n = index.len();
    let mut y = DMatrix::zeros(n, n);
    stamp_branches(&mut y, model, index)?;
    for (reg, &gamma) in model.regulators.iter().zip(taps) {
        let nodes: Vec<&NodeId> = reg.nodes().collect();
        stamp(&mut y, index, &reg.id, &nodes, &reg.model.y_reg(gamma)?)?;
    }
    Ok(y)
}

/// `∂δY/∂γ` for regulator `s` alone, stamped over the node index.
pub fn assemble_d_delta_y(
    model: &NetworkModel,
    index: &NodeIndexMap,
    s: usize,
    gamma: f64,
) -> Result<DMatrix<Complex64>> {
    let reg = model
        .regulators
        .get(s)
        .ok_or_else(|| Error::UnknownRegulator(format!("#{s}")))?;
    let n = index.len();
    let mut y = DMatrix::zeros(n, n);
    let nodes: Vec<&NodeId> = reg.nodes().collect();
    stamp(
        &mut y,
        index,
        &reg.id,
        &nodes,
        &reg.model.d_delta_y_d_gamma(gamma)?,
    )?;
    Ok(y)
}

//! Step-voltage regulator admittance models.
//!
//! A regulator is a two-port (per phase) with short-circuit admittance `y_t`
//! and an ideal tap ratio `t = 1 + γ·Δk` on one side:
//!
//! ```text
//!            ┌                          ┐
//!   Y(γ) =   │  y/t1²       -y/(t1·t2)  │
//!            │ -y/(t1·t2)    y/t2²      │
//!            └                          ┘
//! ```
//!
//! Only one of `t1`, `t2` moves with the tap; the other stays at 1. The
//! three-phase Wye-Wye unit is three uncoupled copies of the same two-port
//! driven by one ganged tap. The tap γ is a continuous real everywhere in this
//! module so that it can be differentiated and perturbed by fractions of a step.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA_K: f64 = 0.00625;
pub const DEFAULT_TAP_MIN: i32 = -16;
pub const DEFAULT_TAP_MAX: i32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapSide {
    From,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegulatorKind {
    OnePhaseFrom,
    OnePhaseTo,
    ThreePhaseWyeWye { tap_side: TapSide },
}

impl RegulatorKind {
    pub fn phase_count(self) -> usize {
        match self {
            RegulatorKind::OnePhaseFrom | RegulatorKind::OnePhaseTo => 1,
            RegulatorKind::ThreePhaseWyeWye { .. } => 3,
        }
    }

    pub fn tap_side(self) -> TapSide {
        match self {
            RegulatorKind::OnePhaseFrom => TapSide::From,
            RegulatorKind::OnePhaseTo => TapSide::To,
            RegulatorKind::ThreePhaseWyeWye { tap_side } => tap_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorModel {
    pub kind: RegulatorKind,
    /// Short-circuit admittance, per unit.
    pub y_t: Complex64,
    /// Per-tap voltage step.
    pub delta_k: f64,
    pub tap_min: i32,
    pub tap_max: i32,
}

type Block = [[Complex64; 2]; 2];

impl RegulatorModel {
    pub fn new(
        kind: RegulatorKind,
        y_t: Complex64,
        delta_k: f64,
        tap_min: i32,
        tap_max: i32,
    ) -> Result<Self> {
        if y_t.norm() == 0.0 || !y_t.is_finite() {
            return Err(Error::Model("regulator admittance must be nonzero".into()));
        }
        if !(delta_k > 0.0) {
            return Err(Error::Model(format!(
                "regulator step {delta_k} must be positive"
            )));
        }
        if tap_min > tap_max {
            return Err(Error::Model(format!(
                "tap bounds [{tap_min}, {tap_max}] are reversed"
            )));
        }
        if 1.0 + f64::from(tap_min) * delta_k <= 0.0 {
            return Err(Error::Model(format!(
                "tap ratio is non-positive at tap {tap_min} with step {delta_k}"
            )));
        }
        Ok(RegulatorModel {
            kind,
            y_t,
            delta_k,
            tap_min,
            tap_max,
        })
    }

    /// Side length of the regulator's primitive matrix (2 or 6).
    pub fn dim(&self) -> usize {
        2 * self.kind.phase_count()
    }

    pub fn check_tap(&self, gamma: f64) -> Result<()> {
        if gamma.is_finite() && gamma >= f64::from(self.tap_min) && gamma <= f64::from(self.tap_max)
        {
            Ok(())
        } else {
            Err(Error::TapOutOfBounds {
                tap: gamma,
                min: self.tap_min,
                max: self.tap_max,
            })
        }
    }

    pub fn ratio(&self, gamma: f64) -> f64 {
        1.0 + gamma * self.delta_k
    }

    /// Primitive admittance at tap `gamma`, nodes ordered `[from.., to..]`.
    pub fn y_reg(&self, gamma: f64) -> Result<DMatrix<Complex64>> {
        self.check_tap(gamma)?;
        let t = self.ratio(gamma);
        let (t1, t2) = match self.kind.tap_side() {
            TapSide::From => (t, 1.0),
            TapSide::To => (1.0, t),
        };
        let y = self.y_t;
        let block = [
            [y / (t1 * t1), -y / (t1 * t2)],
            [-y / (t1 * t2), y / (t2 * t2)],
        ];
        Ok(self.expand(block))
    }

    /// Increment `y_reg(γ) - y_reg(0)` in closed form.
    pub fn delta_y(&self, gamma: f64) -> Result<DMatrix<Complex64>> {
        self.check_tap(gamma)?;
        let t = self.ratio(gamma);
        let y = self.y_t;
        let diag = y * (1.0 / (t * t) - 1.0);
        let off = y * (1.0 - 1.0 / t);
        let zero = Complex64::new(0.0, 0.0);
        let block = match self.kind.tap_side() {
            TapSide::From => [[diag, off], [off, zero]],
            TapSide::To => [[zero, off], [off, diag]],
        };
        Ok(self.expand(block))
    }

    /// Derivative of [`delta_y`](Self::delta_y) with respect to continuous γ.
    pub fn d_delta_y_d_gamma(&self, gamma: f64) -> Result<DMatrix<Complex64>> {
        self.check_tap(gamma)?;
        let t = self.ratio(gamma);
        let scale = self.y_t * self.delta_k;
        let diag = scale * (-2.0 / (t * t * t));
        let off = scale * (1.0 / (t * t));
        let zero = Complex64::new(0.0, 0.0);
        let block = match self.kind.tap_side() {
            TapSide::From => [[diag, off], [off, zero]],
            TapSide::To => [[zero, off], [off, diag]],
        };
        Ok(self.expand(block))
    }

    // Per-phase copies of a 2x2 block; phases never couple.
    fn expand(&self, block: Block) -> DMatrix<Complex64> {
        let n = self.kind.phase_count();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for p in 0..n {
            for (r, row) in block.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    m[(r * n + p, c * n + p)] = v;
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit(kind: RegulatorKind) -> RegulatorModel {
        RegulatorModel::new(kind, c(1.0, 0.0), DEFAULT_DELTA_K, -16, 16).unwrap()
    }

    fn close(a: &DMatrix<Complex64>, b: &[[f64; 2]; 2], tol: f64) {
        for r in 0..2 {
            for col in 0..2 {
                let d = (a[(r, col)] - c(b[r][col], 0.0)).norm();
                assert!(
                    d <= tol,
                    "entry ({r},{col}): {} vs {}",
                    a[(r, col)],
                    b[r][col]
                );
            }
        }
    }

    #[test]
    fn nominal_tap_is_plain_series_admittance() {
        let reg = unit(RegulatorKind::OnePhaseFrom);
        close(&reg.y_reg(0.0).unwrap(), &[[1.0, -1.0], [-1.0, 1.0]], 0.0);
    }

    #[test]
    fn from_side_at_top_tap() {
        let reg = unit(RegulatorKind::OnePhaseFrom);
        let y = reg.y_reg(16.0).unwrap();
        close(&y, &[[1.0 / 1.21, -1.0 / 1.1], [-1.0 / 1.1, 1.0]], 1e-15);
        assert!((y[(0, 0)].re - 0.826_446_281).abs() < 1e-9);
        assert!((y[(0, 1)].re + 0.909_090_909).abs() < 1e-9);
    }

    #[test]
    fn to_side_increment_at_tap_eight() {
        let reg = unit(RegulatorKind::OnePhaseTo);
        let d = reg.delta_y(8.0).unwrap();
        close(
            &d,
            &[
                [0.0, 1.0 - 1.0 / 1.05],
                [1.0 - 1.0 / 1.05, 1.0 / (1.05 * 1.05) - 1.0],
            ],
            1e-15,
        );
        assert!((d[(0, 1)].re - 0.047_619_047_6).abs() < 1e-9);
        assert!((d[(1, 1)].re + 0.092_970_521_5).abs() < 1e-9);
    }

    #[test]
    fn derivative_at_nominal_and_tap_eight() {
        let from = unit(RegulatorKind::OnePhaseFrom);
        close(
            &from.d_delta_y_d_gamma(0.0).unwrap(),
            &[[-2.0 * 0.00625, 0.00625], [0.00625, 0.0]],
            1e-17,
        );
        let to = unit(RegulatorKind::OnePhaseTo);
        let t: f64 = 1.05;
        close(
            &to.d_delta_y_d_gamma(8.0).unwrap(),
            &[
                [0.0, 0.00625 / (t * t)],
                [0.00625 / (t * t), -2.0 * 0.00625 / (t * t * t)],
            ],
            1e-16,
        );
    }

    #[test]
    fn three_phase_nominal_is_per_phase_copy() {
        let reg = unit(RegulatorKind::ThreePhaseWyeWye {
            tap_side: TapSide::To,
        });
        let y = reg.y_reg(0.0).unwrap();
        assert_eq!(y.nrows(), 6);
        for r in 0..6 {
            for col in 0..6 {
                let expected = if r == col {
                    1.0
                } else if r % 3 == col % 3 {
                    -1.0
                } else {
                    0.0
                };
                assert_eq!(y[(r, col)], c(expected, 0.0), "({r},{col})");
            }
        }
    }

    #[test]
    fn out_of_range_tap_is_rejected() {
        let reg = unit(RegulatorKind::OnePhaseFrom);
        assert!(matches!(reg.y_reg(16.5), Err(Error::TapOutOfBounds { .. })));
        assert!(reg.delta_y(-17.0).is_err());
        assert!(reg.d_delta_y_d_gamma(f64::NAN).is_err());
    }

    #[test]
    fn invalid_models_are_rejected() {
        let k = RegulatorKind::OnePhaseFrom;
        assert!(RegulatorModel::new(k, c(0.0, 0.0), 0.00625, -16, 16).is_err());
        assert!(RegulatorModel::new(k, c(1.0, 0.0), 0.0, -16, 16).is_err());
        assert!(RegulatorModel::new(k, c(1.0, 0.0), 0.1, -16, 16).is_err());
        assert!(RegulatorModel::new(k, c(1.0, 0.0), 0.00625, 4, -4).is_err());
    }

    #[test]
    fn increment_vanishes_at_nominal() {
        for kind in [
            RegulatorKind::OnePhaseFrom,
            RegulatorKind::OnePhaseTo,
            RegulatorKind::ThreePhaseWyeWye {
                tap_side: TapSide::From,
            },
        ] {
            let d = unit(kind).delta_y(0.0).unwrap();
            assert!(d.iter().all(|v| *v == c(0.0, 0.0)));
        }
    }
}

//! The three pieces of data a differential quasivariational inequality is
//! built from: the state dynamics `F(t, x, u)`, the strongly monotone
//! operator `A(x, u)` and the convex nonsmooth term `j(x, η, v)`.
//!
//! The nonsmooth term is restricted to positive-part sums
//! `j(x, η, v) = Σₖ ωₖ(x, η)·(v[dₖ])⁺` with nonnegative weights. That family
//! covers the contact yield term and coordinate-separable synthetic yields,
//! and its proximal map is exact.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::space::{LinearMap, Matrix, Space, Vector};

/// Structural constants of a monotone operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OperatorConstants {
    /// m: strong monotonicity in the control metric.
    pub monotonicity: f64,
    /// L′: Lipschitz constant with respect to the state.
    pub state_lipschitz: f64,
    /// L″: Lipschitz constant with respect to the control.
    pub lipschitz: f64,
}

/// Structural constants of a nonsmooth term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct YieldConstants {
    /// α of the four-term bound (state coupling).
    pub alpha: f64,
    /// β of the four-term bound (quasivariational coupling).
    pub beta: f64,
    /// τ, δ of the growth bound `j(x,u,v₁) − j(x,u,v₂) ≤ (τ + δ(‖x‖+‖u‖))‖v₁ − v₂‖`.
    pub tau: f64,
    pub delta: f64,
}

pub trait MonotoneOperator: Send + Sync + Debug {
    fn apply(&self, state: &Vector, u: &Vector) -> Vector;
    fn constants(&self) -> OperatorConstants;
}

pub trait NonsmoothTerm: Send + Sync + Debug {
    /// Coordinates the term acts on, without repetition.
    fn support(&self) -> &[usize];
    /// Weights `ωₖ(x, η) ≥ 0`, one per support coordinate.
    fn weights(&self, state: &Vector, eta: &Vector) -> Vec<f64>;
    fn constants(&self) -> YieldConstants;

    fn freeze(&self, state: &Vector, eta: &Vector) -> FrozenTerm {
        FrozenTerm {
            support: self.support().to_vec(),
            weights: self.weights(state, eta),
        }
    }

    fn eval(&self, state: &Vector, eta: &Vector, v: &Vector) -> f64 {
        self.freeze(state, eta).eval(v)
    }
}

pub trait StateMap: Send + Sync + Debug {
    fn eval(&self, t: f64, state: &Vector, u: &Vector) -> Vector;
    /// L_J on the whole horizon: `‖F(t,x₁,u₁) − F(t,x₂,u₂)‖ ≤ L_J(‖x₁−x₂‖ + ‖u₁−u₂‖)`.
    fn lipschitz(&self) -> f64;
}

/// `v ↦ Σₖ wₖ (v[dₖ])⁺` with the weights fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenTerm {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FrozenTerm {
    pub fn zero() -> Self {
        FrozenTerm {
            support: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn eval(&self, v: &Vector) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(&d, &w)| w * v[d].max(0.0))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroTerm;

impl NonsmoothTerm for ZeroTerm {
    fn support(&self) -> &[usize] {
        &[]
    }

    fn weights(&self, _state: &Vector, _eta: &Vector) -> Vec<f64> {
        Vec::new()
    }

    fn constants(&self) -> YieldConstants {
        YieldConstants {
            alpha: 0.0,
            beta: 0.0,
            tau: 0.0,
            delta: 0.0,
        }
    }
}

/// Extreme eigenvalues of `G⁻¹ S` for symmetric `S` and SPD `G`.
pub(crate) fn generalized_extremes(sym: &Matrix, gram: &Matrix) -> Result<(f64, f64)> {
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::config("Gram matrix is not positive definite"))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::config("singular Gram factor"))?;
    let m = &l_inv * sym * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Norm of a matrix viewed as a map from `domain` into the dual of `dual_of`.
pub(crate) fn dual_operator_norm(matrix: &Matrix, domain: &Space, dual_of: &Space) -> Result<f64> {
    let inv = Cholesky::new(dual_of.gram().clone())
        .ok_or_else(|| Error::config("Gram matrix is not positive definite"))?
        .inverse();
    let pulled = matrix.transpose() * inv * matrix;
    let (_, hi) = generalized_extremes(&((&pulled + pulled.transpose()) * 0.5), domain.gram())?;
    Ok(hi.max(0.0).sqrt())
}

/// `A(x, u) = M u + B x + c` on finite-dimensional spaces.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    linear: Matrix,
    coupling: Matrix,
    offset: Vector,
    constants: OperatorConstants,
}

impl AffineOperator {
    pub fn new(
        linear: Matrix,
        coupling: Matrix,
        offset: Vector,
        state: &Space,
        control: &Space,
    ) -> Result<Self> {
        let n = control.dim();
        check_len("operator rows", n, linear.nrows())?;
        check_len("operator columns", n, linear.ncols())?;
        check_len("coupling rows", n, coupling.nrows())?;
        check_len("coupling columns", state.dim(), coupling.ncols())?;
        check_len("operator offset", n, offset.len())?;
        let sym = (&linear + linear.transpose()) * 0.5;
        let (m, _) = generalized_extremes(&sym, control.gram())?;
        if !(m > 0.0) {
            return Err(Error::config(format!(
                "operator is not strongly monotone (m = {m:.3e})"
            )));
        }
        let lip = dual_operator_norm(&linear, control, control)?;
        let lip_x = dual_operator_norm(&coupling, state, control)?;
        Ok(AffineOperator {
            linear,
            coupling,
            offset,
            constants: OperatorConstants {
                monotonicity: m,
                state_lipschitz: lip_x,
                lipschitz: lip,
            },
        })
    }

    /// `A(x, u) = M u` with no state coupling.
    pub fn linear(linear: Matrix, state: &Space, control: &Space) -> Result<Self> {
        let n = control.dim();
        AffineOperator::new(
            linear,
            Matrix::zeros(n, state.dim()),
            Vector::zeros(n),
            state,
            control,
        )
    }

    pub fn matrix(&self) -> &Matrix {
        &self.linear
    }
}

impl MonotoneOperator for AffineOperator {
    fn apply(&self, state: &Vector, u: &Vector) -> Vector {
        &self.linear * u + &self.coupling * state + &self.offset
    }

    fn constants(&self) -> OperatorConstants {
        self.constants
    }
}

/// `j(x, η, v) = Σₖ max(0, bₖ + cₖ|η[dₖ]|)·(v[dₖ])⁺`.
#[derive(Debug, Clone)]
pub struct SeparableYield {
    support: Vec<usize>,
    base: Vec<f64>,
    coupling: Vec<f64>,
    constants: YieldConstants,
}

impl SeparableYield {
    pub fn new(support: Vec<usize>, base: Vec<f64>, coupling: Vec<f64>, control: &Space) -> Result<Self> {
        if support.len() != base.len() || support.len() != coupling.len() {
            return Err(Error::config("yield support, base and coupling lengths differ"));
        }
        let mut seen = vec![false; control.dim()];
        for &d in &support {
            if d >= control.dim() {
                return Err(Error::config(format!("yield coordinate {d} out of range")));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::config(format!("yield coordinate {d} repeated")));
            }
        }
        if coupling.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::config("yield couplings must be nonnegative"));
        }
        let weights: Vec<f64> = support.iter().map(|&d| control.coordinate_weight(d)).collect();
        let beta = coupling
            .iter()
            .zip(&weights)
            .map(|(c, w)| c * w)
            .fold(0.0, f64::max);
        let tau = base
            .iter()
            .zip(&weights)
            .map(|(b, w)| b.max(0.0) * w.sqrt())
            .sum();
        let delta = coupling.iter().zip(&weights).map(|(c, w)| c * w).sum();
        Ok(SeparableYield {
            support,
            base,
            coupling,
            constants: YieldConstants {
                alpha: 0.0,
                beta,
                tau,
                delta,
            },
        })
    }
}

impl NonsmoothTerm for SeparableYield {
    fn support(&self) -> &[usize] {
        &self.support
    }

    fn weights(&self, _state: &Vector, eta: &Vector) -> Vec<f64> {
        self.support
            .iter()
            .zip(self.base.iter().zip(&self.coupling))
            .map(|(&d, (&b, &c))| (b + c * eta[d].abs()).max(0.0))
            .collect()
    }

    fn constants(&self) -> YieldConstants {
        self.constants
    }
}

/// `F(t, x, u) = P x + Q u + c`.
#[derive(Debug, Clone)]
pub struct LinearStateMap {
    state_part: Matrix,
    control_part: Matrix,
    offset: Vector,
    lipschitz: f64,
}

impl LinearStateMap {
    pub fn new(
        state_part: Matrix,
        control_part: Matrix,
        offset: Vector,
        state: &Arc<Space>,
        control: &Arc<Space>,
    ) -> Result<Self> {
        check_len("offset", state.dim(), offset.len())?;
        let px = LinearMap::new(state_part.clone(), state.clone(), state.clone())?.norm();
        let pu = LinearMap::new(control_part.clone(), control.clone(), state.clone())?.norm();
        Ok(LinearStateMap {
            state_part,
            control_part,
            offset,
            lipschitz: px.max(pu),
        })
    }

    pub fn stationary(state: &Arc<Space>, control: &Arc<Space>) -> Result<Self> {
        let (n, m) = (state.dim(), control.dim());
        LinearStateMap::new(
            Matrix::zeros(n, n),
            Matrix::zeros(n, m),
            Vector::zeros(n),
            state,
            control,
        )
    }
}

impl StateMap for LinearStateMap {
    fn eval(&self, _t: f64, state: &Vector, u: &Vector) -> Vector {
        &self.state_part * state + &self.control_part * u + &self.offset
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_constants_in_weighted_metric() {
        let control = Space::diagonal(&[2.0, 1.0]).unwrap();
        let state = Space::identity(1).unwrap();
        // G⁻¹M = diag(1, 3): m = 1, L″ = 3
        let op = AffineOperator::linear(
            Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0])),
            &state,
            &control,
        )
        .unwrap();
        let c = op.constants();
        assert!((c.monotonicity - 1.0).abs() < 1e-12);
        assert!((c.lipschitz - 3.0).abs() < 1e-12);
        assert_eq!(c.state_lipschitz, 0.0);
    }

    #[test]
    fn non_monotone_operator_is_rejected() {
        let s = Space::identity(2).unwrap();
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(AffineOperator::linear(m, &s, &s).unwrap_err().is_configuration());
    }

    #[test]
    fn separable_yield_constants() {
        let s = Space::identity(1).unwrap();
        let j = SeparableYield::new(vec![0], vec![0.0], vec![0.5], &s).unwrap();
        assert_eq!(j.constants().beta, 0.5);
        let x = Vector::zeros(1);
        let eta = Vector::from_vec(vec![-2.0]);
        assert_eq!(j.weights(&x, &eta), vec![1.0]);
        assert_eq!(j.eval(&x, &eta, &Vector::from_vec(vec![3.0])), 3.0);
        assert_eq!(j.eval(&x, &eta, &Vector::from_vec(vec![-3.0])), 0.0);
    }

    #[test]
    fn frozen_term_is_midpoint_convex() {
        let t = FrozenTerm {
            support: vec![0, 2],
            weights: vec![1.5, 0.25],
        };
        let vs: Vec<Vector> = (0..40)
            .map(|k| Vector::from_fn(3, |i, _| ((k * 7 + i * 3) as f64 * 0.37).sin() * 2.0))
            .collect();
        for a in &vs {
            for b in &vs {
                let mid = (a + b) * 0.5;
                assert!(t.eval(&mid) <= 0.5 * (t.eval(a) + t.eval(b)) + 1e-10);
            }
        }
    }
}

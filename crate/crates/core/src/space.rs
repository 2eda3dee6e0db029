//! Finite-dimensional inner-product spaces, convex constraint sets with exact
//! metric projections, and bounded linear maps between spaces.
//!
//! Vectors are coefficient vectors. A space carries a symmetric positive
//! definite Gram matrix `G`, so `(u, v) = uᵀ G v`. Dual vectors (the values of
//! monotone operators and Riesz-lifted loads) live in the same coordinates and
//! pair with primal vectors through the plain Euclidean product; their norm is
//! `sqrt(rᵀ G⁻¹ r)`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Factor {
    Dense(Cholesky<f64, Dyn>),
    /// LDLᵀ of a symmetric tridiagonal matrix: `pivots` is D, `mult[i]` is L(i, i-1).
    Tridiagonal {
        diag: Vec<f64>,
        off: Vec<f64>,
        pivots: Vec<f64>,
        mult: Vec<f64>,
    },
}

/// A real inner-product space of dimension `dim` given by its Gram matrix.
#[derive(Clone, Debug)]
pub struct Space {
    gram: Matrix,
    factor: Factor,
    diagonal: bool,
}

impl Space {
    pub fn new(gram: Matrix) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 {
            return Err(Error::config("space dimension must be positive"));
        }
        if gram.ncols() != n {
            return Err(Error::config(format!(
                "Gram matrix must be square, got {}x{}",
                n,
                gram.ncols()
            )));
        }
        let scale = gram.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (gram[(i, j)] - gram[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::config(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }

        let mut bandwidth = 0;
        for i in 0..n {
            for j in 0..n {
                if gram[(i, j)] != 0.0 {
                    bandwidth = bandwidth.max(i.abs_diff(j));
                }
            }
        }

        let factor = if bandwidth <= 1 {
            tridiagonal_factor(&gram)?
        } else {
            let chol = Cholesky::new(gram.clone())
                .ok_or_else(|| Error::config("Gram matrix is not positive definite"))?;
            Factor::Dense(chol)
        };

        Ok(Space {
            gram,
            factor,
            diagonal: bandwidth == 0,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Space::new(Matrix::identity(dim, dim))
    }

    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        Space::new(Matrix::from_diagonal(&Vector::from_column_slice(weights)))
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// `(u, v)` in this space.
    pub fn inner(&self, u: &Vector, v: &Vector) -> Result<f64> {
        check_len("inner product", self.dim(), u.len())?;
        check_len("inner product", self.dim(), v.len())?;
        Ok(self.dot(u, v))
    }

    pub fn norm(&self, v: &Vector) -> Result<f64> {
        check_len("norm", self.dim(), v.len())?;
        Ok(self.norm_of(v))
    }

    pub(crate) fn dot(&self, u: &Vector, v: &Vector) -> f64 {
        match &self.factor {
            Factor::Tridiagonal { diag, off, .. } => {
                let n = diag.len();
                let mut s = 0.0;
                for i in 0..n {
                    let mut gv = diag[i] * v[i];
                    if i > 0 {
                        gv += off[i - 1] * v[i - 1];
                    }
                    if i + 1 < n {
                        gv += off[i] * v[i + 1];
                    }
                    s += u[i] * gv;
                }
                s
            }
            Factor::Dense(_) => u.dot(&(&self.gram * v)),
        }
    }

    pub(crate) fn norm_of(&self, v: &Vector) -> f64 {
        self.dot(v, v).max(0.0).sqrt()
    }

    pub(crate) fn distance(&self, u: &Vector, v: &Vector) -> f64 {
        self.norm_of(&(u - v))
    }

    /// `G v`: the dual vector representing `(v, ·)`.
    pub fn lower(&self, v: &Vector) -> Vector {
        match &self.factor {
            Factor::Tridiagonal { diag, off, .. } => {
                let n = diag.len();
                Vector::from_fn(n, |i, _| {
                    let mut s = diag[i] * v[i];
                    if i > 0 {
                        s += off[i - 1] * v[i - 1];
                    }
                    if i + 1 < n {
                        s += off[i] * v[i + 1];
                    }
                    s
                })
            }
            Factor::Dense(_) => &self.gram * v,
        }
    }

    /// `G⁻¹ r`: the Riesz representative of the dual vector `r`.
    pub fn raise(&self, r: &Vector) -> Vector {
        match &self.factor {
            Factor::Dense(chol) => chol.solve(r),
            Factor::Tridiagonal { pivots, mult, .. } => {
                let n = pivots.len();
                let mut y = r.clone();
                for i in 1..n {
                    y[i] -= mult[i] * y[i - 1];
                }
                for i in 0..n {
                    y[i] /= pivots[i];
                }
                for i in (0..n.saturating_sub(1)).rev() {
                    y[i] -= mult[i + 1] * y[i + 1];
                }
                y
            }
        }
    }

    /// `sqrt(rᵀ G⁻¹ r)`, the dual norm.
    pub fn dual_norm(&self, r: &Vector) -> f64 {
        r.dot(&self.raise(r)).max(0.0).sqrt()
    }

    /// `eᵢᵀ G⁻¹ eᵢ`; its square root is the norm of the coordinate functional `v ↦ vᵢ`.
    pub fn coordinate_weight(&self, index: usize) -> f64 {
        self.raise(&unit(self.dim(), index))[index]
    }
}

fn tridiagonal_factor(gram: &Matrix) -> Result<Factor> {
    let n = gram.nrows();
    let diag: Vec<f64> = (0..n).map(|i| gram[(i, i)]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| gram[(i + 1, i)]).collect();
    let mut pivots = vec![0.0; n];
    let mut mult = vec![0.0; n];
    pivots[0] = diag[0];
    for i in 1..n {
        if !(pivots[i - 1] > 0.0) {
            break;
        }
        mult[i] = off[i - 1] / pivots[i - 1];
        pivots[i] = diag[i] - mult[i] * off[i - 1];
    }
    if pivots.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::config("Gram matrix is not positive definite"));
    }
    Ok(Factor::Tridiagonal {
        diag,
        off,
        pivots,
        mult,
    })
}

pub(crate) fn unit(dim: usize, index: usize) -> Vector {
    let mut e = Vector::zeros(dim);
    e[index] = 1.0;
    e
}

#[derive(Clone, Debug, PartialEq)]
pub enum SetKind {
    WholeSpace,
    /// Coordinate box; infinite entries are allowed. Requires a diagonal Gram
    /// matrix so that the metric projection stays a coordinate clamp.
    Box { lower: Vector, upper: Vector },
    /// `{v : v[index] ≤ bound}`.
    NodeUpperBound { index: usize, bound: f64 },
}

/// A nonempty closed convex subset of a [`Space`] with an exact projection in
/// that space's metric.
#[derive(Clone, Debug)]
pub struct ConvexSet {
    kind: SetKind,
    space: Arc<Space>,
    /// `G⁻¹ eᵢ` for the bounded coordinate of a `NodeUpperBound`.
    shift: Option<Vector>,
}

impl ConvexSet {
    pub fn whole(space: Arc<Space>) -> Self {
        ConvexSet {
            kind: SetKind::WholeSpace,
            space,
            shift: None,
        }
    }

    pub fn boxed(space: Arc<Space>, lower: Vector, upper: Vector) -> Result<Self> {
        check_len("box lower bounds", space.dim(), lower.len())?;
        check_len("box upper bounds", space.dim(), upper.len())?;
        if !space.is_diagonal() {
            return Err(Error::config(
                "box constraints need a diagonal Gram matrix for an exact projection",
            ));
        }
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] {
                return Err(Error::config(format!(
                    "empty box: lower[{i}] = {} exceeds upper[{i}] = {}",
                    lower[i], upper[i]
                )));
            }
            if lower[i] == f64::INFINITY || upper[i] == f64::NEG_INFINITY {
                return Err(Error::config(format!("empty box in coordinate {i}")));
            }
        }
        Ok(ConvexSet {
            kind: SetKind::Box { lower, upper },
            space,
            shift: None,
        })
    }

    pub fn node_upper_bound(space: Arc<Space>, index: usize, bound: f64) -> Result<Self> {
        if index >= space.dim() {
            return Err(Error::config(format!(
                "bounded coordinate {index} out of range for dimension {}",
                space.dim()
            )));
        }
        if !bound.is_finite() {
            return Err(Error::config("node bound must be finite"));
        }
        let shift = space.raise(&unit(space.dim(), index));
        Ok(ConvexSet {
            kind: SetKind::NodeUpperBound { index, bound },
            space,
            shift: Some(shift),
        })
    }

    /// Same set family with a different node bound (used for the perturbed sets Kₙ).
    pub fn with_node_bound(&self, bound: f64) -> Result<Self> {
        match self.kind {
            SetKind::NodeUpperBound { index, .. } => {
                if !bound.is_finite() {
                    return Err(Error::config("node bound must be finite"));
                }
                Ok(ConvexSet {
                    kind: SetKind::NodeUpperBound { index, bound },
                    space: self.space.clone(),
                    shift: self.shift.clone(),
                })
            }
            _ => Err(Error::config("set has no node bound to rescale")),
        }
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn node_bound(&self) -> Option<(usize, f64)> {
        match self.kind {
            SetKind::NodeUpperBound { index, bound } => Some((index, bound)),
            _ => None,
        }
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        match &self.kind {
            SetKind::WholeSpace => true,
            SetKind::Box { lower, upper } => v
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(&x, (&lo, &hi))| x >= lo - tol && x <= hi + tol),
            SetKind::NodeUpperBound { index, bound } => v[*index] <= bound + tol,
        }
    }

    /// Metric projection: the unique minimizer of `‖w − v‖` over the set.
    pub fn project(&self, v: &Vector) -> Result<Vector> {
        check_len("projection", self.space.dim(), v.len())?;
        Ok(self.project_unchecked(v))
    }

    pub(crate) fn project_unchecked(&self, v: &Vector) -> Vector {
        match &self.kind {
            SetKind::WholeSpace => v.clone(),
            SetKind::Box { lower, upper } => Vector::from_fn(v.len(), |i, _| {
                v[i].max(lower[i]).min(upper[i])
            }),
            SetKind::NodeUpperBound { index, bound } => {
                let i = *index;
                if v[i] <= *bound {
                    return v.clone();
                }
                let shift = self.shift.as_ref().expect("node bound caches G⁻¹eᵢ");
                let lambda = (v[i] - bound) / shift[i];
                let mut w = v - shift * lambda;
                w[i] = *bound;
                w
            }
        }
    }
}

/// Scales a point of `{vᵢ ≤ g}` into `{vᵢ ≤ gₙ}`: the recovery sequence
/// `vₙ = (gₙ/g)·v` of the gap-scaling Mosco family.
pub fn mosco_scale(base_bound: f64, scaled_bound: f64, index: usize, v: &Vector) -> Result<Vector> {
    if !(base_bound > 0.0) || !(scaled_bound > 0.0) {
        return Err(Error::config(format!(
            "gap bounds must be positive, got g = {base_bound}, gₙ = {scaled_bound}"
        )));
    }
    if index >= v.len() {
        return Err(Error::input(format!(
            "constrained index {index} out of range for length {}",
            v.len()
        )));
    }
    if v[index] > base_bound {
        return Err(Error::input(format!(
            "point violates the base constraint: v[{index}] = {} > {base_bound}",
            v[index]
        )));
    }
    let mut scaled = v * (scaled_bound / base_bound);
    if scaled[index] > scaled_bound {
        scaled[index] = scaled_bound;
    }
    Ok(scaled)
}

/// A linear map between two spaces together with its operator norm
/// `sup ‖Mv‖_codomain / ‖v‖_domain`.
#[derive(Clone, Debug)]
pub struct LinearMap {
    matrix: Matrix,
    domain: Arc<Space>,
    codomain: Arc<Space>,
    norm: f64,
}

impl LinearMap {
    pub fn new(matrix: Matrix, domain: Arc<Space>, codomain: Arc<Space>) -> Result<Self> {
        check_len("linear map columns", domain.dim(), matrix.ncols())?;
        check_len("linear map rows", codomain.dim(), matrix.nrows())?;
        let pulled = matrix.transpose() * codomain.gram() * &matrix;
        let chol = Cholesky::new(domain.gram().clone())
            .ok_or_else(|| Error::config("domain Gram matrix is not positive definite"))?;
        let l = chol.l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::config("singular domain Gram factor"))?;
        let sym = &l_inv * pulled * l_inv.transpose();
        let sym = (&sym + sym.transpose()) * 0.5;
        let largest = sym
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(0.0_f64, f64::max);
        Ok(LinearMap {
            matrix,
            domain,
            codomain,
            norm: largest.max(0.0).sqrt(),
        })
    }

    pub fn identity(space: Arc<Space>) -> Result<Self> {
        let n = space.dim();
        LinearMap::new(Matrix::identity(n, n), space.clone(), space)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn domain(&self) -> &Arc<Space> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<Space> {
        &self.codomain
    }

    /// The constant c₀ with `‖πv‖ ≤ c₀‖v‖`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        check_len("linear map argument", self.domain.dim(), v.len())?;
        Ok(&self.matrix * v)
    }

    /// Riesz lift of a codomain vector: the dual vector `r` with
    /// `rᵀ v = (f, πv)` for every `v`.
    pub fn riesz_lift(&self, f: &Vector) -> Result<Vector> {
        check_len("load vector", self.codomain.dim(), f.len())?;
        Ok(self.matrix.transpose() * (self.codomain.gram() * f))
    }
}

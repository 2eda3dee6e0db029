//! Brute-force references: lattice minimization of convex energies in one
//! and two dimensions, an outer fixed-point loop on top of it, registered
//! small instances, analytic synthetic problems and fine-step reference
//! trajectories.

use std::sync::Arc;

use crate::dvi::{integrate, uniform_grid, DviData, DviProblem, Scheme, Theta, Trajectory};
use crate::error::{Error, Result};
use crate::operators::{generalized_extremes, AffineOperator, LinearStateMap, SeparableYield, ZeroTerm};
use crate::space::{ConvexSet, LinearMap, Matrix, Space, Vector};
use crate::vi::{solve_qvi, Qvi, QviConfig, QviSolution};

/// A problem of dimension ≤ 2 with symmetric `A(u) = M u`, separable yield
/// `Σ max(0, bᵢ + cᵢ|ηᵢ|)·vᵢ⁺`, coordinate bounds and a load.
#[derive(Clone, Debug)]
pub struct OracleInstance {
    pub name: &'static str,
    /// Metric used by the iterative solver (the solution does not depend on it).
    pub gram: Matrix,
    pub matrix: Matrix,
    pub base: Vec<f64>,
    pub coupling: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub load: Vector,
    pub spacing: f64,
}

/// Solver-side view of an [`OracleInstance`].
#[derive(Debug)]
pub struct OracleSetup {
    pub state: Vector,
    pub operator: AffineOperator,
    pub term: SeparableYield,
    pub set: ConvexSet,
    pub load: Vector,
}

impl OracleSetup {
    pub fn qvi(&self) -> Qvi<'_> {
        Qvi {
            state: &self.state,
            operator: &self.operator,
            term: &self.term,
            set: &self.set,
            load: &self.load,
        }
    }
}

impl OracleInstance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_coupled(&self) -> bool {
        self.coupling.iter().any(|&c| c != 0.0)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || n > 2 {
            return Err(Error::config("brute-force oracles are limited to dimension 1 or 2"));
        }
        if [self.base.len(), self.coupling.len(), self.lower.len(), self.upper.len(), self.load.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::config("oracle instance data lengths disagree"));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::config("oracle spacing must be positive"));
        }
        if (0..n).any(|i| !(self.lower[i] <= self.upper[i])) {
            return Err(Error::config("oracle feasible set is empty"));
        }
        if (&self.matrix - self.matrix.transpose()).amax() > 0.0 {
            return Err(Error::config("oracle energies need a symmetric operator"));
        }
        Ok(())
    }

    /// Solver data: operator, yield and constraint set in the instance metric.
    pub fn setup(&self) -> Result<OracleSetup> {
        self.validate()?;
        let n = self.dim();
        let space = Arc::new(Space::new(self.gram.clone())?);
        let state_space = Space::identity(1)?;
        let operator = AffineOperator::linear(self.matrix.clone(), &state_space, &space)?;
        let support: Vec<usize> = (0..n)
            .filter(|&i| self.base[i] != 0.0 || self.coupling[i] != 0.0)
            .collect();
        let term = SeparableYield::new(
            support.clone(),
            support.iter().map(|&i| self.base[i]).collect(),
            support.iter().map(|&i| self.coupling[i]).collect(),
            &space,
        )?;
        let finite_lower = self.lower.iter().filter(|l| l.is_finite()).count();
        let finite_upper: Vec<usize> = (0..n).filter(|&i| self.upper[i].is_finite()).collect();
        let set = match (finite_lower, finite_upper.as_slice()) {
            (0, []) => ConvexSet::whole(space),
            (0, [i]) => ConvexSet::node_upper_bound(space, *i, self.upper[*i])?,
            _ => ConvexSet::boxed(
                space,
                Vector::from_column_slice(&self.lower),
                Vector::from_column_slice(&self.upper),
            )?,
        };
        Ok(OracleSetup {
            state: Vector::zeros(1),
            operator,
            term,
            set,
            load: self.load.clone(),
        })
    }

    /// Solution by the iterative QVI solver.
    pub fn solve(&self, cfg: &QviConfig, start: Option<&Vector>) -> Result<QviSolution> {
        let s = self.setup()?;
        solve_qvi(&s.qvi(), cfg, start)
    }

    fn weights(&self, eta: &Vector) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (self.base[i] + self.coupling[i] * eta[i].abs()).max(0.0))
            .collect()
    }

    fn energy(&self, u: &[f64], weights: &[f64]) -> f64 {
        let n = self.dim();
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                e += 0.5 * u[i] * self.matrix[(i, j)] * u[j];
            }
            e += weights[i] * u[i].max(0.0) - self.load[i] * u[i];
        }
        e
    }

    /// Radius of a Euclidean ball containing the minimizer for these weights.
    fn radius(&self, weights: &[f64]) -> Result<f64> {
        let n = self.dim();
        let (lmin, _) = generalized_extremes(&self.matrix, &Matrix::identity(n, n))?;
        if !(lmin > 0.0) {
            return Err(Error::config("oracle operator must be positive definite"));
        }
        let w: f64 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        Ok((self.load.norm() + w) / lmin + 1.0)
    }

    fn minimize(&self, weights: &[f64]) -> Result<Vector> {
        let n = self.dim();
        let r = self.radius(weights)?;
        let window: Vec<(f64, f64)> = (0..n)
            .map(|i| (self.lower[i].max(-r), self.upper[i].min(r)))
            .collect();
        if n == 1 {
            let pts = axis(window[0], self.spacing, self.lower[0], self.upper[0]);
            let best = pts
                .iter()
                .copied()
                .min_by(|a, b| self.energy(&[*a], weights).total_cmp(&self.energy(&[*b], weights)))
                .ok_or_else(|| Error::config("empty oracle lattice"))?;
            return Ok(Vector::from_element(1, best));
        }
        let width = window.iter().map(|(a, b)| b - a).fold(0.0, f64::max);
        let mut spacing = self.spacing;
        while width / spacing > 400.0 {
            spacing *= 10.0;
        }
        let mut win = window.clone();
        loop {
            let xs = axis(win[0], spacing, self.lower[0], self.upper[0]);
            let ys = axis(win[1], spacing, self.lower[1], self.upper[1]);
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for &x in &xs {
                for &y in &ys {
                    let e = self.energy(&[x, y], weights);
                    if e < best.0 {
                        best = (e, x, y);
                    }
                }
            }
            if !best.0.is_finite() {
                return Err(Error::config("empty oracle lattice"));
            }
            if spacing <= self.spacing * (1.0 + 1e-9) {
                return Ok(Vector::from_vec(vec![best.1, best.2]));
            }
            let reach = 20.0 * spacing;
            win = vec![
                (window[0].0.max(best.1 - reach), window[0].1.min(best.1 + reach)),
                (window[1].0.max(best.2 - reach), window[1].1.min(best.2 + reach)),
            ];
            spacing /= 10.0;
        }
    }
}

/// Lattice `k·spacing` inside `window`, plus the finite bounds of the
/// coordinate when they fall inside it.
fn axis(window: (f64, f64), spacing: f64, lower: f64, upper: f64) -> Vec<f64> {
    let (a, b) = window;
    let k0 = (a / spacing).ceil() as i64;
    let k1 = (b / spacing).floor() as i64;
    let mut pts: Vec<f64> = (k0..=k1).map(|k| k as f64 * spacing).collect();
    for bound in [lower, upper] {
        if bound.is_finite() && bound >= a && bound <= b {
            pts.push(bound);
        }
    }
    pts
}

/// Lattice minimizer of `½⟨Mu,u⟩ + Σ bᵢuᵢ⁺ − ⟨f,u⟩` over the feasible lattice.
/// Refuses η-coupled instances.
pub fn brute_force_vi(inst: &OracleInstance) -> Result<Vector> {
    inst.validate()?;
    if inst.is_coupled() {
        return Err(Error::config("instance is η-coupled; use the QVI oracle"));
    }
    inst.minimize(&inst.weights(&Vector::zeros(inst.dim())))
}

/// Outer fixed point of the lattice VI map, stopped when two successive
/// iterates are within one lattice spacing.
pub fn brute_force_qvi(inst: &OracleInstance) -> Result<Vector> {
    inst.validate()?;
    let mut eta = Vector::zeros(inst.dim());
    for _ in 0..500 {
        let u = inst.minimize(&inst.weights(&eta))?;
        let step = (&u - &eta).amax();
        eta = u;
        if step <= inst.spacing * (1.0 + 1e-9) {
            return Ok(eta);
        }
    }
    Err(Error::NonConvergence {
        solver: "lattice fixed-point oracle",
        iterations: 500,
        residual: f64::NAN,
    })
}

fn m(rows: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, rows, data)
}

/// The registered oracle instances.
pub fn registered_instances() -> Vec<OracleInstance> {
    let inf = f64::INFINITY;
    let one = |name, a: f64, b: f64, c: f64, upper: f64, f: f64| OracleInstance {
        name,
        gram: m(1, &[1.0]),
        matrix: m(1, &[a]),
        base: vec![b],
        coupling: vec![c],
        lower: vec![-inf],
        upper: vec![upper],
        load: Vector::from_element(1, f),
        spacing: 1e-5,
    };
    vec![
        one("r1-linear", 1.0, 0.0, 0.0, inf, 3.0),
        one("r1-clamp", 1.0, 0.0, 0.0, 2.0, 3.0),
        one("r1-kink-bound", 2.0, 1.0, 0.0, 0.5, 2.0),
        one("r1-kink", 1.0, 1.0, 0.0, inf, 0.4),
        one("r1-qvi", 2.0, 0.0, 0.5, 1.0, -1.0),
        one("r1-qvi-penetrating", 2.0, 0.3, 0.4, 2.0, 2.0),
        OracleInstance {
            name: "r2-box-active",
            gram: m(2, &[1.0, 0.0, 0.0, 1.0]),
            matrix: m(2, &[2.0, 1.0, 1.0, 2.0]),
            base: vec![0.0, 0.0],
            coupling: vec![0.0, 0.0],
            lower: vec![-1.0, -0.5],
            upper: vec![1.0, 0.5],
            load: Vector::from_vec(vec![3.0, -1.0]),
            spacing: 1e-5,
        },
        OracleInstance {
            name: "r2-box-inactive",
            gram: m(2, &[1.0, 0.0, 0.0, 1.0]),
            matrix: m(2, &[2.0, 1.0, 1.0, 2.0]),
            base: vec![0.0, 0.0],
            coupling: vec![0.0, 0.0],
            lower: vec![-2.0, -2.0],
            upper: vec![2.0, 2.0],
            load: Vector::from_vec(vec![1.0, 0.5]),
            spacing: 1e-5,
        },
        OracleInstance {
            name: "r2-node-bound-weighted",
            gram: m(2, &[2.0, 0.6, 0.6, 1.0]),
            matrix: m(2, &[3.0, 1.0, 1.0, 2.0]),
            base: vec![0.0, 0.5],
            coupling: vec![0.0, 0.0],
            lower: vec![-inf, -inf],
            upper: vec![inf, 0.2],
            load: Vector::from_vec(vec![1.0, 2.0]),
            spacing: 1e-5,
        },
        OracleInstance {
            name: "r2-yield-box",
            gram: m(2, &[1.0, 0.0, 0.0, 2.0]),
            matrix: m(2, &[2.0, 0.5, 0.5, 1.5]),
            base: vec![0.3, 0.2],
            coupling: vec![0.0, 0.0],
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
            load: Vector::from_vec(vec![1.0, 0.5]),
            spacing: 1e-5,
        },
        OracleInstance {
            name: "r2-qvi",
            gram: m(2, &[1.0, 0.0, 0.0, 1.0]),
            matrix: m(2, &[4.0, 1.0, 1.0, 3.0]),
            base: vec![0.2, 0.1],
            coupling: vec![0.5, 0.4],
            lower: vec![-inf, -inf],
            upper: vec![inf, inf],
            load: Vector::from_vec(vec![3.0, 2.0]),
            spacing: 1e-5,
        },
        OracleInstance {
            name: "r2-qvi-bound",
            gram: m(2, &[2.0, 0.5, 0.5, 1.0]),
            matrix: m(2, &[3.0, 0.5, 0.5, 2.5]),
            base: vec![0.1, 0.0],
            coupling: vec![0.3, 0.0],
            lower: vec![-inf, -inf],
            upper: vec![0.4, inf],
            load: Vector::from_vec(vec![3.0, 1.0]),
            spacing: 1e-5,
        },
    ]
}

/// Tags accepted by [`synthetic_problem`].
pub const SYNTHETIC_TAGS: [&str; 5] = ["exp-decay", "linear-growth", "stationary", "r1-qvi", "r2-qvi"];

/// Small analytic problems:
///
/// * `exp-decay`: `ẋ = −x`, `u = 0`, `x(t) = e^{−t}`
/// * `linear-growth`: `ẋ = u`, `u = 3`, `x(t) = 3t`
/// * `stationary`: `ẋ = 0`, QVI of `r1-qvi-penetrating`
/// * `r1-qvi`: `ẋ = −x + u` with the coupled scalar QVI driven by `sin(2πt)`
/// * `r2-qvi`: `ẋ = −x + u₁` with the coupled planar QVI of `r2-qvi`
pub fn synthetic_problem(tag: &str) -> Result<DviProblem> {
    let s1 = Arc::new(Space::identity(1)?);
    let mm = |v: f64| Matrix::from_element(1, 1, v);
    let scalar = |dynamics: (f64, f64), a: f64, term: Option<(f64, f64)>, bound: Option<f64>, theta: Theta, f: f64, x0: f64| {
        let set = match bound {
            Some(g) => ConvexSet::node_upper_bound(s1.clone(), 0, g)?,
            None => ConvexSet::whole(s1.clone()),
        };
        let term: Arc<dyn crate::operators::NonsmoothTerm> = match term {
            Some((b, c)) => Arc::new(SeparableYield::new(vec![0], vec![b], vec![c], &s1)?),
            None => Arc::new(ZeroTerm),
        };
        DviProblem::new(DviData {
            state_space: s1.clone(),
            dynamics: Arc::new(LinearStateMap::new(
                mm(dynamics.0),
                mm(dynamics.1),
                Vector::zeros(1),
                &s1,
                &s1,
            )?),
            operator: Arc::new(AffineOperator::linear(mm(a), &s1, &s1)?),
            term,
            set,
            pi: LinearMap::identity(s1.clone())?,
            theta,
            load: Vector::from_element(1, f),
            x0: Vector::from_element(1, x0),
        })
    };
    match tag {
        "exp-decay" => scalar((-1.0, 0.0), 1.0, None, None, Theta::Const, 0.0, 1.0),
        "linear-growth" => scalar((0.0, 1.0), 1.0, None, None, Theta::Const, 3.0, 0.0),
        "stationary" => scalar((0.0, 0.0), 2.0, Some((0.3, 0.4)), Some(2.0), Theta::Const, 2.0, 1.0),
        "r1-qvi" => scalar((-1.0, 1.0), 2.0, Some((0.0, 0.5)), Some(1.0), Theta::Sine, 3.0, 0.0),
        "r2-qvi" => {
            let instances = registered_instances();
            let inst = instances.iter().find(|i| i.name == "r2-qvi").expect("registered");
            let v = Arc::new(Space::new(inst.gram.clone())?);
            let setup = inst.setup()?;
            DviProblem::new(DviData {
                state_space: s1.clone(),
                dynamics: Arc::new(LinearStateMap::new(
                    mm(-1.0),
                    Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
                    Vector::zeros(1),
                    &s1,
                    &v,
                )?),
                operator: Arc::new(setup.operator),
                term: Arc::new(setup.term),
                set: setup.set,
                pi: LinearMap::identity(v)?,
                theta: Theta::Ramp,
                load: inst.load.clone(),
                x0: Vector::from_element(1, 0.5),
            })
        }
        other => Err(Error::config(format!(
            "unknown instance tag '{other}' (known: {})",
            SYNTHETIC_TAGS.join(", ")
        ))),
    }
}

/// Time step of reference trajectories.
pub const REFERENCE_STEP: f64 = 1e-4;

/// Solver settings of reference trajectories.
pub fn reference_config() -> QviConfig {
    QviConfig {
        inner_tol: 1e-12,
        outer_tol: 1e-12,
        ..QviConfig::default()
    }
}

/// Heun with step `dt` (rounded to divide the horizon) at tight tolerances.
pub fn reference_trajectory(problem: &DviProblem, horizon: f64, dt: f64) -> Result<Trajectory> {
    if !(horizon > 0.0) || !(dt > 0.0) {
        return Err(Error::input("reference trajectory needs positive horizon and step"));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    integrate(problem, &uniform_grid(steps, horizon), Scheme::Heun, &reference_config())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_oracle_examples() {
        let inst = &registered_instances();
        let find = |n: &str| inst.iter().find(|i| i.name == n).unwrap();
        assert!((brute_force_vi(find("r1-kink-bound")).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!(brute_force_vi(find("r1-kink")).unwrap()[0].abs() < 1e-12);
        assert!((brute_force_qvi(find("r1-qvi")).unwrap()[0] + 0.5).abs() <= 2e-5);
        assert!(brute_force_vi(find("r1-qvi")).unwrap_err().is_configuration());
    }

    #[test]
    fn three_dimensions_are_refused() {
        let mut inst = registered_instances()[0].clone();
        inst.matrix = Matrix::identity(3, 3);
        assert!(brute_force_vi(&inst).is_err());
    }

    #[test]
    fn planar_oracle_matches_closed_form() {
        let inst = registered_instances().into_iter().find(|i| i.name == "r2-box-inactive").unwrap();
        let u = brute_force_vi(&inst).unwrap();
        assert!((u[0] - 0.5).abs() <= 2e-5 && u[1].abs() <= 2e-5, "{u}");
    }

    #[test]
    fn unknown_tag_lists_the_known_ones() {
        let err = synthetic_problem("nope").unwrap_err().to_string();
        assert!(err.contains("exp-decay"));
        for tag in SYNTHETIC_TAGS {
            synthetic_problem(tag).unwrap();
        }
    }
}

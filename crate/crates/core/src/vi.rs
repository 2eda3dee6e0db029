//! Frozen-state variational and quasivariational inequality solvers.
//!
//! For a fixed state `x` the QVI asks for `u ∈ K` with
//!
//! ```text
//! ⟨A(x,u), v − u⟩ + j(x,u,v) − j(x,u,u) ≥ ⟨f̄, v − u⟩   for all v ∈ K.
//! ```
//!
//! The outer loop is successive approximation on the second argument of `j`:
//! freeze `η`, solve the resulting VI, set `η` to the answer, repeat. When
//! `m > β` this map contracts with factor `β/m`. Each VI is solved by
//! projected proximal gradient in the control metric,
//! `u ← prox_{γφ, K}(u − γ G⁻¹(A(u) − f̄))`, which contracts with factor
//! `sqrt(1 − 2γm + γ²L″²)` for `γ ∈ (0, 2m/L″²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operators::{FrozenTerm, MonotoneOperator, NonsmoothTerm};
use crate::space::{ConvexSet, SetKind, Space, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QviConfig {
    /// Bound on the V-distance of an inner iterate to the frozen VI solution.
    pub inner_tol: f64,
    /// Bound on the V-distance of the outer iterate to the QVI fixed point.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Gradient step γ; `None` selects m/L″².
    pub step: Option<f64>,
    /// Random feasible directions used by residual certificates.
    pub residual_samples: usize,
    pub seed: u64,
}

impl Default for QviConfig {
    fn default() -> Self {
        QviConfig {
            inner_tol: 1e-9,
            outer_tol: 1e-10,
            max_inner: 20_000,
            max_outer: 1_000,
            step: None,
            residual_samples: 256,
            seed: 0,
        }
    }
}

impl QviConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol > 0.0) || !(self.outer_tol > 0.0) {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::config("iteration limits must be at least 1"));
        }
        Ok(())
    }

    /// Tolerance actually handed to inner solves inside the outer loop, so
    /// that inner error stays below the outer resolution.
    pub fn effective_inner_tol(&self) -> f64 {
        self.inner_tol.min(0.1 * self.outer_tol)
    }

    fn step_for(&self, m: f64, lip: f64) -> Result<f64> {
        let limit = 2.0 * m / (lip * lip);
        let gamma = self.step.unwrap_or(m / (lip * lip));
        if !(gamma > 0.0 && gamma < limit) {
            return Err(Error::config(format!(
                "gradient step γ = {gamma:.4e} outside (0, 2m/L″²) = (0, {limit:.4e})"
            )));
        }
        Ok(gamma)
    }
}

/// Exact composite `argmin_{w∈K} ½‖w − z‖² + γ φ(w)` for the supported
/// combinations of metric, set and positive-part term.
#[derive(Clone, Debug)]
enum ProxPlan {
    /// Diagonal metric: everything splits by coordinate.
    Separable {
        metric: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// General metric, term and constraint on one coordinate only.
    SingleDof {
        dof: usize,
        column: Vector,
        upper: f64,
    },
    Identity,
}

impl ProxPlan {
    fn new(set: &ConvexSet, support: &[usize]) -> Result<Self> {
        let space = set.space();
        let n = space.dim();
        if space.is_diagonal() {
            let metric: Vec<f64> = (0..n).map(|i| space.gram()[(i, i)]).collect();
            let (lower, upper) = match set.kind() {
                SetKind::WholeSpace => (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]),
                SetKind::Box { lower, upper } => {
                    (lower.iter().cloned().collect(), upper.iter().cloned().collect())
                }
                SetKind::NodeUpperBound { index, bound } => {
                    let mut upper = vec![f64::INFINITY; n];
                    upper[*index] = *bound;
                    (vec![f64::NEG_INFINITY; n], upper)
                }
            };
            return Ok(ProxPlan::Separable {
                metric,
                lower,
                upper,
            });
        }
        let (dof, upper) = match (set.kind(), support) {
            (SetKind::WholeSpace, []) => return Ok(ProxPlan::Identity),
            (SetKind::WholeSpace, [d]) => (*d, f64::INFINITY),
            (SetKind::NodeUpperBound { index, bound }, []) => (*index, *bound),
            (SetKind::NodeUpperBound { index, bound }, [d]) if d == index => (*index, *bound),
            _ => {
                return Err(Error::config(
                    "non-diagonal metric needs the nonsmooth term and the constraint on one common coordinate",
                ))
            }
        };
        let mut e = Vector::zeros(n);
        e[dof] = 1.0;
        Ok(ProxPlan::SingleDof {
            dof,
            column: space.raise(&e),
            upper,
        })
    }

    fn apply(&self, z: &Vector, gamma: f64, term: &FrozenTerm) -> Vector {
        match self {
            ProxPlan::Identity => z.clone(),
            ProxPlan::Separable {
                metric,
                lower,
                upper,
            } => {
                let mut w = z.clone();
                let mut thresholds = vec![0.0; z.len()];
                for (&d, &wt) in term.support.iter().zip(&term.weights) {
                    thresholds[d] += gamma * wt / metric[d];
                }
                for i in 0..w.len() {
                    w[i] = soft_positive(z[i], thresholds[i]).max(lower[i]).min(upper[i]);
                }
                w
            }
            ProxPlan::SingleDof { dof, column, upper } => {
                let d = column[*dof];
                let weight: f64 = term
                    .support
                    .iter()
                    .zip(&term.weights)
                    .filter(|(&s, _)| s == *dof)
                    .map(|(_, &w)| w)
                    .sum();
                let s = soft_positive(z[*dof], gamma * weight * d).min(*upper);
                let mut w = z + column * ((s - z[*dof]) / d);
                w[*dof] = s;
                w
            }
        }
    }
}

/// Minimizer of `½(s − z)² + t·s⁺`.
fn soft_positive(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < 0.0 {
        z
    } else {
        0.0
    }
}

/// A variational inequality with frozen nonsmooth term:
/// `⟨A(u), v − u⟩ + φ(v) − φ(u) ≥ ⟨f̄, v − u⟩` on `K`.
pub struct VariationalInequality<'a> {
    pub operator: &'a (dyn Fn(&Vector) -> Vector + Sync),
    pub monotonicity: f64,
    pub lipschitz: f64,
    pub term: &'a FrozenTerm,
    pub set: &'a ConvexSet,
    pub load: &'a Vector,
}

#[derive(Clone, Debug)]
pub struct ViSolution {
    pub u: Vector,
    pub iterations: usize,
    /// Last V-distance between successive iterates.
    pub step_residual: f64,
}

pub fn solve_vi(
    vi: &VariationalInequality<'_>,
    cfg: &QviConfig,
    start: Option<&Vector>,
) -> Result<ViSolution> {
    cfg.validate()?;
    let plan = ProxPlan::new(vi.set, &vi.term.support)?;
    proximal_gradient(vi, &plan, cfg, cfg.inner_tol, start)
}

fn proximal_gradient(
    vi: &VariationalInequality<'_>,
    plan: &ProxPlan,
    cfg: &QviConfig,
    tol: f64,
    start: Option<&Vector>,
) -> Result<ViSolution> {
    let space = vi.set.space();
    let n = space.dim();
    check_len("load", n, vi.load.len())?;
    let (m, lip) = (vi.monotonicity, vi.lipschitz);
    if !(m > 0.0) || !(lip >= m) {
        return Err(Error::config(format!(
            "operator constants must satisfy 0 < m ≤ L″ (m = {m}, L″ = {lip})"
        )));
    }
    let gamma = cfg.step_for(m, lip)?;
    let rho = (1.0 - 2.0 * gamma * m + gamma * gamma * lip * lip).max(0.0).sqrt();
    let factor = rho / (1.0 - rho);

    let mut u = match start {
        Some(s) => {
            check_len("initial iterate", n, s.len())?;
            vi.set.project_unchecked(s)
        }
        None => vi.set.project_unchecked(&Vector::zeros(n)),
    };
    let mut step = f64::INFINITY;
    for k in 1..=cfg.max_inner {
        let residual = (vi.operator)(&u) - vi.load;
        let z = &u - space.raise(&residual) * gamma;
        let next = plan.apply(&z, gamma, vi.term);
        step = space.distance(&next, &u);
        u = next;
        if step == 0.0 || factor * step <= tol {
            return Ok(ViSolution {
                u,
                iterations: k,
                step_residual: step,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "projected proximal gradient",
        iterations: cfg.max_inner,
        residual: step,
    })
}

/// Frozen-state QVI data: `A(x,·)`, `j(x,·,·)`, `K`, `f̄` at one state `x`.
#[derive(Clone, Copy)]
pub struct Qvi<'a> {
    pub state: &'a Vector,
    pub operator: &'a dyn MonotoneOperator,
    pub term: &'a dyn NonsmoothTerm,
    pub set: &'a ConvexSet,
    pub load: &'a Vector,
}

impl<'a> Qvi<'a> {
    /// β/m, the contraction factor of the outer iteration.
    pub fn coupling_ratio(&self) -> f64 {
        self.term.constants().beta / self.operator.constants().monotonicity
    }

    /// `G(u, v) = ⟨A(x,u) − f̄, v − u⟩ + j(x,u,v) − j(x,u,u)`.
    pub fn gap(&self, u: &Vector, v: &Vector) -> f64 {
        let residual = self.operator.apply(self.state, u) - self.load;
        let frozen = self.term.freeze(self.state, u);
        residual.dot(&(v - u)) + frozen.eval(v) - frozen.eval(u)
    }
}

#[derive(Clone, Debug)]
pub struct QviSolution {
    pub u: Vector,
    /// ‖ηₖ₊₁ − ηₖ‖ / ‖ηₖ − ηₖ₋₁‖ for every outer step.
    pub outer_rates: Vec<f64>,
    /// ‖ηₖ − ηₖ₋₁‖ for every outer step.
    pub outer_steps: Vec<f64>,
    /// Number of correction steps after the first frozen solve.
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub inner_tol: f64,
}

impl QviSolution {
    /// Largest observed contraction ratio among steps that are resolved
    /// above the inner-solver noise.
    pub fn observed_rate(&self) -> f64 {
        let floor = 1e3 * self.inner_tol;
        self.outer_rates
            .iter()
            .zip(&self.outer_steps)
            .filter(|(_, &denominator)| denominator > floor)
            .map(|(&r, _)| r)
            .fold(0.0, f64::max)
    }
}

pub fn solve_qvi(qvi: &Qvi<'_>, cfg: &QviConfig, start: Option<&Vector>) -> Result<QviSolution> {
    cfg.validate()?;
    let oc = qvi.operator.constants();
    let yc = qvi.term.constants();
    if !(oc.monotonicity > yc.beta) {
        return Err(Error::config(format!(
            "contraction condition violated: m = {:.6e} ≤ β = {:.6e}",
            oc.monotonicity, yc.beta
        )));
    }
    let n = qvi.set.space().dim();
    check_len("state-frozen load", n, qvi.load.len())?;
    let plan = ProxPlan::new(qvi.set, qvi.term.support())?;
    let q = yc.beta / oc.monotonicity;
    let outer_factor = (q / (1.0 - q)).max(1.0);
    let inner_tol = cfg.effective_inner_tol();

    let mut eta = match start {
        Some(s) => {
            check_len("initial iterate", n, s.len())?;
            qvi.set.project_unchecked(s)
        }
        None => qvi.set.project_unchecked(&Vector::zeros(n)),
    };
    let apply = |u: &Vector| qvi.operator.apply(qvi.state, u);
    let mut outer_steps = Vec::new();
    let mut outer_rates = Vec::new();
    let mut inner_iterations = 0;
    for solves in 1..=cfg.max_outer + 1 {
        let frozen = qvi.term.freeze(qvi.state, &eta);
        let vi = VariationalInequality {
            operator: &apply,
            monotonicity: oc.monotonicity,
            lipschitz: oc.lipschitz,
            term: &frozen,
            set: qvi.set,
            load: qvi.load,
        };
        let sol = proximal_gradient(&vi, &plan, cfg, inner_tol, Some(&eta))?;
        inner_iterations += sol.iterations;
        let step = qvi.set.space().distance(&sol.u, &eta);
        if let Some(&prev) = outer_steps.last() {
            outer_rates.push(if prev > 0.0 { step / prev } else { 0.0 });
        }
        outer_steps.push(step);
        eta = sol.u;
        if step == 0.0 || outer_factor * step <= cfg.outer_tol {
            return Ok(QviSolution {
                u: eta,
                outer_rates,
                outer_steps,
                outer_iterations: solves - 1,
                inner_iterations,
                inner_tol,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "outer fixed-point iteration",
        iterations: cfg.max_outer,
        residual: outer_steps.last().copied().unwrap_or(f64::NAN),
    })
}

/// Sampled feasible test points around `u`: single-coordinate moves at two
/// scales, constraint-active and kink vertices, and random directions.
pub fn feasible_samples(set: &ConvexSet, u: &Vector, kinks: &[usize], count: usize, seed: u64) -> Vec<Vector> {
    let space = set.space();
    let n = space.dim();
    let radius = 1.0 + space.norm_of(u);
    let mut out = Vec::with_capacity(4 * n + count + 4);
    for i in 0..n {
        let unit_len = space.gram()[(i, i)].sqrt();
        for scale in [0.5 * radius, 1e-3 * radius] {
            for sign in [1.0, -1.0] {
                let mut v = u.clone();
                v[i] += sign * scale / unit_len;
                out.push(set.project_unchecked(&v));
            }
        }
    }
    match set.kind() {
        SetKind::WholeSpace => {}
        SetKind::NodeUpperBound { index, bound } => {
            let mut v = u.clone();
            v[*index] = *bound;
            out.push(v);
        }
        SetKind::Box { lower, upper } => {
            for i in 0..n {
                for b in [lower[i], upper[i]] {
                    if b.is_finite() {
                        let mut v = u.clone();
                        v[i] = b;
                        out.push(v);
                    }
                }
            }
        }
    }
    for &k in kinks {
        let mut v = u.clone();
        v[k] = 0.0;
        out.push(set.project_unchecked(&v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let dir = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let len = space.norm_of(&dir).max(f64::MIN_POSITIVE);
        let scale = radius * rng.random::<f64>() / len;
        out.push(set.project_unchecked(&(u + dir * scale)));
    }
    out
}

/// Outcome of a sampled residual check of the (Q)VI at a candidate `u`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    /// Smallest sampled value of the gap function.
    pub min_gap: f64,
    /// Smallest sampled `gap + tolerance`; nonnegative means passed.
    pub margin: f64,
    /// Problem scale multiplying the tolerances.
    pub scale: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Checks `G(u,v) ≥ −(inner_tol + outer_tol)·κ·(1 + ‖v − u‖)` on sampled
/// feasible `v`, with `κ = 1 + L″ + ‖A(x,u) − f̄‖* + Σₖ ωₖ‖eₖ‖*` the size of
/// the gap function's sensitivity to an error in `u`.
pub fn certify_qvi(qvi: &Qvi<'_>, u: &Vector, cfg: &QviConfig, seed: u64) -> Result<Certificate> {
    let space = qvi.set.space();
    check_len("candidate", space.dim(), u.len())?;
    let residual = qvi.operator.apply(qvi.state, u) - qvi.load;
    let frozen = qvi.term.freeze(qvi.state, u);
    let scale = 1.0
        + qvi.operator.constants().lipschitz
        + space.dual_norm(&residual)
        + frozen
            .support
            .iter()
            .zip(&frozen.weights)
            .map(|(&d, &w)| w * space.coordinate_weight(d).sqrt())
            .sum::<f64>();
    let tol = (cfg.inner_tol + cfg.outer_tol) * scale;
    let phi_u = frozen.eval(u);
    let samples = feasible_samples(qvi.set, u, &frozen.support, cfg.residual_samples, seed);
    let mut min_gap = 0.0_f64;
    let mut margin = f64::INFINITY;
    for v in &samples {
        let d = v - u;
        let gap = residual.dot(&d) + frozen.eval(v) - phi_u;
        min_gap = min_gap.min(gap);
        margin = margin.min(gap + tol * (1.0 + space.norm_of(&d)));
    }
    let feasible = qvi.set.contains(u, 1e-12 * (1.0 + u.amax()));
    Ok(Certificate {
        min_gap,
        margin,
        scale,
        samples: samples.len(),
        passed: feasible && margin >= 0.0,
    })
}

/// Same certificate for a frozen-term VI.
pub fn certify_vi(vi: &VariationalInequality<'_>, u: &Vector, cfg: &QviConfig, seed: u64) -> Result<Certificate> {
    let space = vi.set.space();
    check_len("candidate", space.dim(), u.len())?;
    let residual = (vi.operator)(u) - vi.load;
    let scale = 1.0
        + vi.lipschitz
        + space.dual_norm(&residual)
        + vi
            .term
            .support
            .iter()
            .zip(&vi.term.weights)
            .map(|(&d, &w)| w * space.coordinate_weight(d).sqrt())
            .sum::<f64>();
    let tol = cfg.inner_tol * scale;
    let phi_u = vi.term.eval(u);
    let samples = feasible_samples(vi.set, u, &vi.term.support, cfg.residual_samples, seed);
    let mut min_gap = 0.0_f64;
    let mut margin = f64::INFINITY;
    for v in &samples {
        let d = v - u;
        let gap = residual.dot(&d) + vi.term.eval(v) - phi_u;
        min_gap = min_gap.min(gap);
        margin = margin.min(gap + tol * (1.0 + space.norm_of(&d)));
    }
    let feasible = vi.set.contains(u, 1e-12 * (1.0 + u.amax()));
    Ok(Certificate {
        min_gap,
        margin,
        scale,
        samples: samples.len(),
        passed: feasible && margin >= 0.0,
    })
}

/// `min_v G(u, v)` over `v = u` and `samples` random feasible points; zero
/// or slightly negative at a solution, clearly negative away from one.
pub fn equilibrium_residual(qvi: &Qvi<'_>, u: &Vector, samples: usize, seed: u64) -> Result<f64> {
    let space = qvi.set.space();
    check_len("candidate", space.dim(), u.len())?;
    if !qvi.set.contains(u, 1e-12 * (1.0 + u.amax())) {
        return Err(Error::input("equilibrium residual needs a feasible point"));
    }
    let frozen = qvi.term.freeze(qvi.state, u);
    let residual = qvi.operator.apply(qvi.state, u) - qvi.load;
    let phi_u = frozen.eval(u);
    let points = feasible_samples(qvi.set, u, &frozen.support, samples, seed);
    Ok(points
        .iter()
        .map(|v| residual.dot(&(v - u)) + frozen.eval(v) - phi_u)
        .fold(0.0, f64::min))
}

#[allow(dead_code)]
pub(crate) fn space_of<'a>(qvi: &'a Qvi<'_>) -> &'a Space {
    qvi.set.space()
}

//! Time discretization of the coupled system: at every node the QVI is solved
//! at the current state, then the ODE takes one explicit step.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{check_len, Error, Result};
use crate::format;
use crate::operators::{MonotoneOperator, NonsmoothTerm, StateMap};
use crate::space::{ConvexSet, LinearMap, Space, Vector};
use crate::vi::{certify_qvi, solve_qvi, Certificate, Qvi, QviConfig, QviSolution};

/// Time profile θ of a separable load `f(t) = θ(t)·f̃`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theta {
    #[default]
    Const,
    Ramp,
    Sine,
}

impl Theta {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Theta::Const => 1.0,
            Theta::Ramp => t,
            Theta::Sine => (2.0 * std::f64::consts::PI * t).sin(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "euler")]
    ExplicitEuler,
    #[default]
    #[serde(rename = "heun")]
    Heun,
}

/// Raw ingredients of a problem; [`DviProblem::new`] validates them and
/// derives the constants.
#[derive(Clone, Debug)]
pub struct DviData {
    pub state_space: Arc<Space>,
    pub dynamics: Arc<dyn StateMap>,
    pub operator: Arc<dyn MonotoneOperator>,
    pub term: Arc<dyn NonsmoothTerm>,
    pub set: ConvexSet,
    /// π: V → Z.
    pub pi: LinearMap,
    pub theta: Theta,
    /// f̃ in Z coordinates.
    pub load: Vector,
    pub x0: Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub m: f64,
    pub beta: f64,
    pub alpha: f64,
    /// L′
    pub state_lipschitz: f64,
    /// L″
    pub lipschitz: f64,
    /// L_J
    pub dynamics_lipschitz: f64,
    /// c₀ = ‖π‖
    pub c0: f64,
    pub tau: f64,
    pub delta: f64,
}

impl ProblemConstants {
    /// `(L′ + α)/(m − β)`: Lipschitz constant of the state-to-solution map.
    pub fn solution_lipschitz(&self) -> f64 {
        (self.state_lipschitz + self.alpha) / (self.m - self.beta)
    }
}

#[derive(Clone, Debug)]
pub struct DviProblem {
    data: DviData,
    lifted: Vector,
    constants: ProblemConstants,
}

impl DviProblem {
    pub fn new(data: DviData) -> Result<Self> {
        let v = data.set.space();
        let z = data.pi.codomain();
        check_len("initial state", data.state_space.dim(), data.x0.len())?;
        check_len("π domain", v.dim(), data.pi.domain().dim())?;
        check_len("load", z.dim(), data.load.len())?;
        if data.term.support().iter().any(|&d| d >= v.dim()) {
            return Err(Error::config("nonsmooth term acts on a coordinate outside V"));
        }
        if !data.pi.domain().gram().eq(v.gram()) {
            return Err(Error::config("π must be defined on the control space"));
        }
        let oc = data.operator.constants();
        let yc = data.term.constants();
        if !(oc.monotonicity > yc.beta) {
            return Err(Error::config(format!(
                "contraction condition violated: m = {:.6e} ≤ β = {:.6e}",
                oc.monotonicity, yc.beta
            )));
        }
        let lifted = data.pi.riesz_lift(&data.load)?;
        let constants = ProblemConstants {
            m: oc.monotonicity,
            beta: yc.beta,
            alpha: yc.alpha,
            state_lipschitz: oc.state_lipschitz,
            lipschitz: oc.lipschitz,
            dynamics_lipschitz: data.dynamics.lipschitz(),
            c0: data.pi.norm(),
            tau: yc.tau,
            delta: yc.delta,
        };
        Ok(DviProblem {
            data,
            lifted,
            constants,
        })
    }

    pub fn data(&self) -> &DviData {
        &self.data
    }

    pub fn constants(&self) -> ProblemConstants {
        self.constants
    }

    pub fn set(&self) -> &ConvexSet {
        &self.data.set
    }

    pub fn state_space(&self) -> &Arc<Space> {
        &self.data.state_space
    }

    pub fn control_space(&self) -> &Arc<Space> {
        self.data.set.space()
    }

    pub fn x0(&self) -> &Vector {
        &self.data.x0
    }

    /// `f̄(t) = θ(t)·πᵀ G_Z f̃`, the load as a dual vector on V.
    pub fn load_at(&self, t: f64) -> Vector {
        &self.lifted * self.data.theta.eval(t)
    }

    pub fn dynamics(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.data.dynamics.eval(t, x, u)
    }

    pub fn qvi<'a>(&'a self, state: &'a Vector, load: &'a Vector) -> Qvi<'a> {
        Qvi {
            state,
            operator: &*self.data.operator,
            term: &*self.data.term,
            set: &self.data.set,
            load,
        }
    }

    pub fn solve_at(&self, t: f64, x: &Vector, cfg: &QviConfig, start: Option<&Vector>) -> Result<QviSolution> {
        check_len("state", self.data.state_space.dim(), x.len())?;
        let load = self.load_at(t);
        solve_qvi(&self.qvi(x, &load), cfg, start)
    }

    pub fn certify_at(&self, t: f64, x: &Vector, u: &Vector, cfg: &QviConfig, seed: u64) -> Result<Certificate> {
        check_len("state", self.data.state_space.dim(), x.len())?;
        let load = self.load_at(t);
        certify_qvi(&self.qvi(x, &load), u, cfg, seed)
    }

    /// Samples the structural hypotheses with the declared constants.
    pub fn check_hypotheses(&self, samples: usize, seed: u64) -> HypothesisReport {
        let xs = &*self.data.state_space;
        let vs = self.control_space();
        let c = self.constants;
        let op = &self.data.operator;
        let term = &self.data.term;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let mut r = HypothesisReport {
            samples,
            min_monotonicity: f64::INFINITY,
            max_lipschitz: 0.0,
            max_state_lipschitz: 0.0,
            max_dynamics_lipschitz: 0.0,
            max_four_term_excess: f64::NEG_INFINITY,
            max_convexity_excess: f64::NEG_INFINITY,
            max_pi_ratio: 0.0,
            passed: false,
        };
        for k in 0..samples {
            let (x1, x2) = (draw(xs.dim()), draw(xs.dim()));
            let (u1, u2) = (draw(vs.dim()), draw(vs.dim()));
            let (v1, v2) = (draw(vs.dim()), draw(vs.dim()));
            let t = (k as f64 + 0.5) / samples as f64;
            let du = &u1 - &u2;
            let ndu = vs.norm_of(&du);
            let ndx = xs.distance(&x1, &x2);
            let ndv = vs.distance(&v1, &v2);
            let da = op.apply(&x1, &u1) - op.apply(&x1, &u2);
            r.min_monotonicity = r.min_monotonicity.min(da.dot(&du) / (ndu * ndu));
            r.max_lipschitz = r.max_lipschitz.max(vs.dual_norm(&da) / ndu);
            let dax = op.apply(&x1, &u1) - op.apply(&x2, &u1);
            r.max_state_lipschitz = r.max_state_lipschitz.max(vs.dual_norm(&dax) / ndx);
            let df = self.dynamics(t, &x1, &u1) - self.dynamics(t, &x2, &u2);
            r.max_dynamics_lipschitz = r.max_dynamics_lipschitz.max(xs.norm_of(&df) / (ndx + ndu));
            let j = |x: &Vector, u: &Vector, v: &Vector| term.eval(x, u, v);
            let four = j(&x1, &u1, &v2) - j(&x1, &u1, &v1) + j(&x2, &u2, &v1) - j(&x2, &u2, &v2);
            let bound = (c.alpha * ndx + c.beta * ndu) * ndv;
            r.max_four_term_excess = r.max_four_term_excess.max(four - bound - 1e-10 * (1.0 + bound));
            let mid = (&v1 + &v2) * 0.5;
            let convex = j(&x1, &u1, &mid) - 0.5 * (j(&x1, &u1, &v1) + j(&x1, &u1, &v2));
            r.max_convexity_excess = r.max_convexity_excess.max(convex - 1e-10);
            let piv = self.data.pi.matrix() * &v1;
            r.max_pi_ratio = r.max_pi_ratio.max(self.data.pi.codomain().norm_of(&piv) / vs.norm_of(&v1));
        }
        r.passed = samples == 0
            || (r.min_monotonicity >= c.m * (1.0 - 1e-6)
                && r.max_lipschitz <= c.lipschitz * (1.0 + 1e-6)
                && r.max_state_lipschitz <= c.state_lipschitz * (1.0 + 1e-6) + 1e-12
                && r.max_dynamics_lipschitz <= 1.01 * c.dynamics_lipschitz + 1e-12
                && r.max_four_term_excess <= 0.0
                && r.max_convexity_excess <= 0.0
                && r.max_pi_ratio <= c.c0 * (1.0 + 1e-9));
        r
    }
}

/// Sampled estimates of the structural constants against the declared ones.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub min_monotonicity: f64,
    pub max_lipschitz: f64,
    pub max_state_lipschitz: f64,
    pub max_dynamics_lipschitz: f64,
    /// Largest sampled violation of the four-term bound (≤ 0 when it holds).
    pub max_four_term_excess: f64,
    pub max_convexity_excess: f64,
    pub max_pi_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeStats {
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub observed_rate: f64,
    /// `max(0, −min sampled gap)` of the node certificate.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
    pub stats: Vec<NodeStats>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the node at time `t`, if one lies within 1e-12.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
    }

    /// One row per node: `t, x…, u…, residual, outer_iterations`.
    pub fn to_csv(&self) -> String {
        let nx = self.states.first().map_or(0, |x| x.len());
        let nu = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend(format::numbered("x", nx));
        header.extend(format::numbered("u", nu));
        header.push("residual".into());
        header.push("outer_iterations".into());
        let mut out = format::row(&header);
        for i in 0..self.len() {
            let mut cells = vec![format::float(self.times[i])];
            format::push_floats(&mut cells, self.states[i].iter().copied());
            format::push_floats(&mut cells, self.controls[i].iter().copied());
            cells.push(format::float(self.stats[i].residual));
            cells.push(self.stats[i].outer_iterations.to_string());
            out.push_str(&format::row(&cells));
        }
        out
    }

    pub fn to_json(&self, constants: &ProblemConstants) -> serde_json::Value {
        let vecs = |v: &[Vector]| v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
        json!({
            "scheme": self.scheme,
            "nodes": self.len(),
            "constants": constants,
            "times": self.times,
            "states": vecs(&self.states),
            "controls": vecs(&self.controls),
            "stats": self.stats,
        })
    }
}

/// `steps + 1` equispaced nodes on `[0, horizon]`.
pub fn uniform_grid(steps: usize, horizon: f64) -> Vec<f64> {
    (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect()
}

pub(crate) fn node_seed(seed: u64, node: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (node as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::input("time grid must start at 0"));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::input("time grid must be finite and strictly increasing"));
    }
    Ok(())
}

fn solve_certified(
    problem: &DviProblem,
    t: f64,
    x: &Vector,
    cfg: &QviConfig,
    start: Option<&Vector>,
    node: usize,
) -> Result<(Vector, NodeStats)> {
    let sol = problem.solve_at(t, x, cfg, start)?;
    let cert = problem.certify_at(t, x, &sol.u, cfg, node_seed(cfg.seed, node))?;
    if !cert.passed {
        return Err(Error::Certificate(format!(
            "sampled gap {:.3e} below tolerance (margin {:.3e})",
            cert.min_gap, cert.margin
        )));
    }
    let stats = NodeStats {
        inner_iterations: sol.inner_iterations,
        outer_iterations: sol.outer_iterations,
        observed_rate: sol.observed_rate(),
        residual: (-cert.min_gap).max(0.0),
    };
    Ok((sol.u, stats))
}

pub fn integrate(problem: &DviProblem, grid: &[f64], scheme: Scheme, cfg: &QviConfig) -> Result<Trajectory> {
    check_grid(grid)?;
    cfg.validate()?;
    let mut states = Vec::with_capacity(grid.len());
    let mut controls: Vec<Vector> = Vec::with_capacity(grid.len());
    let mut stats = Vec::with_capacity(grid.len());
    let mut x = problem.x0().clone();
    for (i, &t) in grid.iter().enumerate() {
        let (u, st) = solve_certified(problem, t, &x, cfg, controls.last(), i).map_err(|e| e.at_node(i))?;
        states.push(x.clone());
        stats.push(st);
        if let Some(&next) = grid.get(i + 1) {
            let dt = next - t;
            let k1 = problem.dynamics(t, &x, &u);
            x = match scheme {
                Scheme::ExplicitEuler => &x + &k1 * dt,
                Scheme::Heun => {
                    let xp = &x + &k1 * dt;
                    let up = problem
                        .solve_at(next, &xp, cfg, Some(&u))
                        .map_err(|e| e.at_node(i + 1))?
                        .u;
                    let k2 = problem.dynamics(next, &xp, &up);
                    &x + (k1 + k2) * (0.5 * dt)
                }
            };
        }
        controls.push(u);
    }
    Ok(Trajectory {
        scheme,
        times: grid.to_vec(),
        states,
        controls,
        stats,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Order {
    Slope(f64),
    /// All errors at rounding or solver-tolerance level; no slope is defined.
    Exact,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub order: Order,
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
}

/// Least-squares slope of `log(error)` against `log(Δt)` over `levels`
/// successive halvings starting from `base_steps` on `[0, horizon]`. The
/// error at the final time is `‖x − x_ref‖_X + ‖u − u_ref‖_V`.
pub fn observed_order(
    problem: &DviProblem,
    scheme: Scheme,
    base_steps: usize,
    horizon: f64,
    levels: usize,
    reference: (&Vector, &Vector),
    cfg: &QviConfig,
) -> Result<OrderReport> {
    if levels < 3 {
        return Err(Error::input("observed order needs at least 3 refinement levels"));
    }
    if base_steps == 0 || !(horizon > 0.0) {
        return Err(Error::input("observed order needs a positive step count and horizon"));
    }
    let (x_ref, u_ref) = reference;
    check_len("reference state", problem.state_space().dim(), x_ref.len())?;
    check_len("reference control", problem.control_space().dim(), u_ref.len())?;
    let mut steps = Vec::with_capacity(levels);
    let mut errors = Vec::with_capacity(levels);
    for level in 0..levels {
        let n = base_steps << level;
        let traj = integrate(problem, &uniform_grid(n, horizon), scheme, cfg)?;
        let (x, u) = (traj.states.last().unwrap(), traj.controls.last().unwrap());
        let err = problem.state_space().distance(x, x_ref) + problem.control_space().distance(u, u_ref);
        steps.push(n);
        errors.push(err);
    }
    let scale = 1.0 + problem.state_space().norm_of(x_ref) + problem.control_space().norm_of(u_ref);
    // Control errors cannot drop below the solver tolerance.
    let floor = 1e-12 * scale + 10.0 * (cfg.inner_tol + cfg.outer_tol);
    if errors.iter().all(|&e| e <= floor) {
        return Ok(OrderReport {
            order: Order::Exact,
            steps,
            errors,
        });
    }
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(&errors)
        .map(|(&n, &e)| ((horizon / n as f64).ln(), e.max(floor).ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(OrderReport {
        order: Order::Slope(sxy / sxx),
        steps,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{AffineOperator, LinearStateMap, ZeroTerm};
    use crate::space::Matrix;

    fn scalar_problem(state: f64, control: f64, x0: f64, load: f64) -> DviProblem {
        let s = Arc::new(Space::identity(1).unwrap());
        let m = |v: f64| Matrix::from_element(1, 1, v);
        DviProblem::new(DviData {
            state_space: s.clone(),
            dynamics: Arc::new(LinearStateMap::new(m(state), m(control), Vector::zeros(1), &s, &s).unwrap()),
            operator: Arc::new(AffineOperator::linear(m(1.0), &s, &s).unwrap()),
            term: Arc::new(ZeroTerm),
            set: ConvexSet::whole(s.clone()),
            pi: LinearMap::identity(s.clone()).unwrap(),
            theta: Theta::Const,
            load: Vector::from_element(1, load),
            x0: Vector::from_element(1, x0),
        })
        .unwrap()
    }

    #[test]
    fn stationary_dynamics_keep_the_initial_state() {
        let p = scalar_problem(0.0, 0.0, 1.5, 2.0);
        let tr = integrate(&p, &uniform_grid(20, 1.0), Scheme::Heun, &QviConfig::default()).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 1.5));
        assert!(tr.controls.iter().all(|u| (u[0] - 2.0).abs() < 1e-12));
    }

    #[test]
    fn linear_in_time_state_is_reproduced() {
        let p = scalar_problem(0.0, 1.0, 0.0, 3.0);
        let tr = integrate(&p, &uniform_grid(10, 1.0), Scheme::ExplicitEuler, &QviConfig::default()).unwrap();
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert!((x[0] - 3.0 * t).abs() < 1e-9, "{t} {}", x[0]);
        }
    }

    #[test]
    fn grid_validation() {
        let p = scalar_problem(-1.0, 0.0, 1.0, 0.0);
        let cfg = QviConfig::default();
        assert!(integrate(&p, &[0.0, 0.5, 0.5], Scheme::Heun, &cfg).unwrap_err().is_configuration());
        assert!(integrate(&p, &[0.1, 0.5], Scheme::Heun, &cfg).unwrap_err().is_configuration());
    }

    #[test]
    fn too_few_levels_is_an_input_error() {
        let p = scalar_problem(-1.0, 0.0, 1.0, 0.0);
        let x = Vector::zeros(1);
        let err = observed_order(&p, Scheme::Heun, 10, 1.0, 2, (&x, &x), &QviConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let p = scalar_problem(-1.0, 0.0, 1.0, 0.0);
        let tr = integrate(&p, &uniform_grid(4, 1.0), Scheme::Heun, &QviConfig::default()).unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x0,u0,residual,outer_iterations");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn theta_profiles() {
        assert_eq!(Theta::Const.eval(0.3), 1.0);
        assert_eq!(Theta::Ramp.eval(0.3), 0.3);
        assert!((Theta::Sine.eval(0.25) - 1.0).abs() < 1e-15);
    }
}

//! Perturbed problem families `Pₙ` whose data converge to a base problem,
//! the auxiliary problems `P̃ₙ` (perturbed QVI data, base state path) and the
//! convergence report comparing all of them with the base solution.
//!
//! Every family decays like `1/n`:
//!
//! * `Fₙ = F + (Γ/n)·ŵ·(γ + (ŵ, x)⁺)` with `ŵ` the unit state vector along ones
//! * `Aₙ = A + (Λ/n)·q̂·(λ + (ŵ, x)⁺)` with `q̂` a unit dual vector (u-independent, so `mₙ = m`)
//! * `jₙ` adds `τ/n` to every yield weight
//! * `f̃ₙ = f̃ + (d/n)·ẑ` with `ẑ` the unit load vector along ones
//! * `x₀ₙ = x₀ + (s/n)·ŵ`
//! * `Kₙ`: the node bound scaled to `Gₙ = G·(1 + g/n)`, kept inside `[M₀, M₁]`
//!
//! In finite dimensions weak and norm convergence of `f̃ₙ` coincide; the
//! families here converge in norm.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dvi::{integrate, node_seed, DviData, DviProblem, ProblemConstants, Scheme, Trajectory};
use crate::error::{Error, Result};
use crate::format;
use crate::operators::{MonotoneOperator, NonsmoothTerm, OperatorConstants, StateMap, YieldConstants};
use crate::space::{SetKind, Space, Vector};
use crate::vi::QviConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Γ: amplitude of the state-map perturbation.
    pub dynamics: f64,
    /// γ: offset inside the state-map perturbation.
    pub dynamics_offset: f64,
    /// Λ: amplitude of the operator perturbation.
    pub operator: f64,
    /// λ: offset inside the operator perturbation.
    pub operator_offset: f64,
    /// τ: yield-weight shift.
    pub yield_shift: f64,
    /// d: load shift.
    pub load: f64,
    /// s: initial-state shift.
    pub initial: f64,
    /// g: relative gap shift.
    pub gap: f64,
    /// `[M₀, M₁]` every `Gₙ` must stay in.
    pub gap_bounds: Option<[f64; 2]>,
}

/// Names of the canonical families.
pub const FAMILIES: [&str; 7] = ["dynamics", "operator", "yield", "load", "initial", "gap", "joint"];

impl PerturbationSpec {
    /// A canonical 1/n family, scaled by `amplitude`.
    pub fn family(name: &str, amplitude: f64) -> Result<Self> {
        let a = amplitude;
        let mut s = PerturbationSpec::default();
        match name {
            "dynamics" => {
                s.dynamics = a;
                s.dynamics_offset = 1.0;
            }
            "operator" => {
                s.operator = a;
                s.operator_offset = 1.0;
            }
            "yield" => s.yield_shift = a,
            "load" => s.load = a,
            "initial" => s.initial = a,
            "gap" => s.gap = a,
            "joint" => {
                s = PerturbationSpec {
                    dynamics: a,
                    dynamics_offset: 1.0,
                    operator: a,
                    operator_offset: 1.0,
                    yield_shift: a,
                    load: a,
                    initial: a,
                    gap: a,
                    gap_bounds: None,
                }
            }
            other => {
                return Err(Error::config(format!(
                    "unknown perturbation family '{other}' (known: {})",
                    FAMILIES.join(", ")
                )))
            }
        }
        Ok(s)
    }

    pub fn is_zero(&self) -> bool {
        [
            self.dynamics,
            self.operator,
            self.yield_shift,
            self.load,
            self.initial,
            self.gap,
        ]
        .iter()
        .all(|&v| v == 0.0)
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.dynamics,
            self.dynamics_offset,
            self.operator,
            self.operator_offset,
            self.yield_shift,
            self.load,
            self.initial,
            self.gap,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("perturbation amplitudes must be finite"));
        }
        if self.dynamics < 0.0 || self.operator < 0.0 || self.yield_shift < 0.0 {
            return Err(Error::config("Γ, Λ and τ must be nonnegative"));
        }
        if self.dynamics_offset < 0.0 || self.operator_offset < 0.0 {
            return Err(Error::config("γ and λ must be nonnegative"));
        }
        if let Some([lo, hi]) = self.gap_bounds {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::config("gap bounds must satisfy 0 < M₀ ≤ M₁"));
            }
        }
        Ok(())
    }
}

/// Unit vector along ones in `space`.
fn unit_ones(space: &Space) -> Vector {
    let ones = Vector::from_element(space.dim(), 1.0);
    let norm = space.norm_of(&ones);
    ones / norm
}

#[derive(Debug)]
struct PerturbedDynamics {
    base: Arc<dyn StateMap>,
    direction: Vector,
    dual_direction: Vector,
    amplitude: f64,
    offset: f64,
}

impl StateMap for PerturbedDynamics {
    fn eval(&self, t: f64, state: &Vector, u: &Vector) -> Vector {
        let s = self.dual_direction.dot(state).max(0.0);
        self.base.eval(t, state, u) + &self.direction * (self.amplitude * (self.offset + s))
    }

    fn lipschitz(&self) -> f64 {
        self.base.lipschitz() + self.amplitude
    }
}

#[derive(Debug)]
struct PerturbedOperator {
    base: Arc<dyn MonotoneOperator>,
    shift: Vector,
    dual_direction: Vector,
    amplitude: f64,
    offset: f64,
}

impl MonotoneOperator for PerturbedOperator {
    fn apply(&self, state: &Vector, u: &Vector) -> Vector {
        let s = self.dual_direction.dot(state).max(0.0);
        self.base.apply(state, u) + &self.shift * (self.amplitude * (self.offset + s))
    }

    fn constants(&self) -> OperatorConstants {
        let c = self.base.constants();
        OperatorConstants {
            state_lipschitz: c.state_lipschitz + self.amplitude,
            ..c
        }
    }
}

#[derive(Debug)]
struct ShiftedYield {
    base: Arc<dyn NonsmoothTerm>,
    shift: f64,
    /// `Σₖ sqrt((G⁻¹)_{dₖdₖ})`
    trace_sum: f64,
}

impl NonsmoothTerm for ShiftedYield {
    fn support(&self) -> &[usize] {
        self.base.support()
    }

    fn weights(&self, state: &Vector, eta: &Vector) -> Vec<f64> {
        self.base.weights(state, eta).into_iter().map(|w| w + self.shift).collect()
    }

    fn constants(&self) -> YieldConstants {
        let c = self.base.constants();
        YieldConstants {
            tau: c.tau + self.shift * self.trace_sum,
            ..c
        }
    }
}

/// Problem `Pₙ` of the family.
pub fn build_perturbed(base: &DviProblem, spec: &PerturbationSpec, n: usize) -> Result<DviProblem> {
    if n == 0 {
        return Err(Error::input("family index n starts at 1"));
    }
    spec.validate()?;
    if spec.is_zero() {
        return Ok(base.clone());
    }
    let scale = 1.0 / n as f64;
    let mut data: DviData = base.data().clone();
    let xs = base.state_space().clone();
    let vs = base.control_space().clone();
    let w = unit_ones(&xs);
    let w_dual = xs.lower(&w);
    if spec.dynamics != 0.0 {
        data.dynamics = Arc::new(PerturbedDynamics {
            base: data.dynamics.clone(),
            direction: w.clone(),
            dual_direction: w_dual.clone(),
            amplitude: spec.dynamics * scale,
            offset: spec.dynamics_offset,
        });
    }
    if spec.operator != 0.0 {
        data.operator = Arc::new(PerturbedOperator {
            base: data.operator.clone(),
            shift: vs.lower(&unit_ones(&vs)),
            dual_direction: w_dual.clone(),
            amplitude: spec.operator * scale,
            offset: spec.operator_offset,
        });
    }
    if spec.yield_shift != 0.0 {
        let trace_sum = data
            .term
            .support()
            .iter()
            .map(|&d| vs.coordinate_weight(d).sqrt())
            .sum();
        data.term = Arc::new(ShiftedYield {
            base: data.term.clone(),
            shift: spec.yield_shift * scale,
            trace_sum,
        });
    }
    if spec.load != 0.0 {
        data.load = &data.load + unit_ones(data.pi.codomain()) * (spec.load * scale);
    }
    if spec.initial != 0.0 {
        data.x0 = &data.x0 + &w * (spec.initial * scale);
    }
    if spec.gap != 0.0 {
        let g = match data.set.kind() {
            SetKind::NodeUpperBound { bound, .. } => *bound,
            _ => return Err(Error::config("gap perturbations need a node-bound constraint set")),
        };
        let gn = g * (1.0 + spec.gap * scale);
        if let Some([lo, hi]) = spec.gap_bounds {
            if !(gn >= lo && gn <= hi) {
                return Err(Error::config(format!(
                    "G_{n} = {gn:.6e} violates the uniform bound M₀ = {lo} ≤ Gₙ ≤ M₁ = {hi}"
                )));
            }
        }
        data.set = data.set.with_node_bound(gn)?;
    }
    let problem = DviProblem::new(data)?;
    let (c, b) = (problem.constants(), base.constants());
    if c.m < b.m * (1.0 - 1e-12) {
        return Err(Error::config(format!(
            "m_{n} = {:.6e} below the uniform bound m = {:.6e}",
            c.m, b.m
        )));
    }
    Ok(problem)
}

/// Uniform constants of the family: worst case over `P₁` and the base.
pub fn uniform_constants(base: &DviProblem, spec: &PerturbationSpec) -> Result<ProblemConstants> {
    let b = base.constants();
    let p = build_perturbed(base, spec, 1)?.constants();
    Ok(ProblemConstants {
        m: b.m.min(p.m),
        beta: b.beta.max(p.beta),
        alpha: b.alpha.max(p.alpha),
        state_lipschitz: b.state_lipschitz.max(p.state_lipschitz),
        lipschitz: b.lipschitz.max(p.lipschitz),
        dynamics_lipschitz: b.dynamics_lipschitz.max(p.dynamics_lipschitz),
        c0: b.c0.max(p.c0),
        tau: b.tau.max(p.tau),
        delta: b.delta.max(p.delta),
    })
}

/// Solutions of the perturbed QVI along the base state path.
pub fn solve_auxiliary(base: &Trajectory, problem_n: &DviProblem, cfg: &QviConfig) -> Result<Vec<Vector>> {
    let mut out: Vec<Vector> = Vec::with_capacity(base.len());
    for (i, (t, x)) in base.times.iter().zip(&base.states).enumerate() {
        let start = out.last().or(base.controls.get(i));
        let u = problem_n
            .solve_at(*t, x, cfg, start)
            .and_then(|sol| {
                let cert = problem_n.certify_at(*t, x, &sol.u, cfg, node_seed(cfg.seed ^ 0xA0C5, i))?;
                if cert.passed {
                    Ok(sol.u)
                } else {
                    Err(Error::Certificate(format!(
                        "auxiliary solution gap {:.3e} below tolerance",
                        cert.min_gap
                    )))
                }
            })
            .map_err(|e| e.at_node(i))?;
        out.push(u);
    }
    Ok(out)
}

/// Perturbed and auxiliary solutions of one family member.
#[derive(Clone, Debug)]
pub struct Member {
    pub n: usize,
    pub trajectory: Trajectory,
    pub auxiliary: Vec<Vector>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub n: usize,
    pub t: f64,
    pub e_u: f64,
    pub e_x: f64,
    pub e_aux: f64,
    pub bound_lhs: f64,
    pub bound_rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayCheck {
    pub t: f64,
    pub e_u_first: f64,
    pub e_u_last: f64,
    pub e_x_first: f64,
    pub e_x_last: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub ns: Vec<usize>,
    pub records: Vec<Record>,
    pub decay: Vec<DecayCheck>,
    /// `(L′ + α)/(m − β)` with the uniform constants.
    pub solution_lipschitz: f64,
    pub slack: f64,
    /// Largest `‖ũₙ(t)‖` over all members and nodes.
    pub auxiliary_bound: f64,
    /// `e_u(4n) ≤ 0.6·e_u(n)` at the sampled times wherever `e_u(n)` is above the noise floor.
    pub monotone_decay: bool,
    pub bounds_pass: bool,
    pub decay_pass: bool,
    pub passed: bool,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = format::row(["n", "t", "e_u", "e_x", "e_aux", "bound_lhs", "bound_rhs", "pass"]);
        for r in &self.records {
            out.push_str(&format::row([
                r.n.to_string(),
                format::float(r.t),
                format::float(r.e_u),
                format::float(r.e_x),
                format::float(r.e_aux),
                format::float(r.bound_lhs),
                format::float(r.bound_rhs),
                if r.pass { "PASS" } else { "FAIL" }.to_string(),
            ]));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let verdict = |b: bool| if b { "PASS" } else { "FAIL" };
        json!({
            "ns": self.ns,
            "solution_lipschitz": self.solution_lipschitz,
            "slack": self.slack,
            "auxiliary_bound": self.auxiliary_bound,
            "decay": self.decay,
            "pointwise_bound": verdict(self.bounds_pass),
            "terminal_decay": verdict(self.decay_pass),
            "monotone_decay": verdict(self.monotone_decay),
            "verdict": verdict(self.passed),
            "load_convergence": "norm-convergent sequence (weak and strong convergence coincide in finite dimensions)",
        })
    }
}

/// Compares all members with the base trajectory.
pub fn certify_convergence(
    base_problem: &DviProblem,
    base: &Trajectory,
    members: &[Member],
    constants: &ProblemConstants,
    cfg: &QviConfig,
    sample_times: &[f64],
) -> Result<ConvergenceReport> {
    if members.is_empty() {
        return Err(Error::input("convergence report needs at least one family member"));
    }
    for m in members {
        if m.trajectory.times != base.times || m.auxiliary.len() != base.len() {
            return Err(Error::input(format!("member n={} is not on the base time grid", m.n)));
        }
    }
    let xs = base_problem.state_space();
    let vs = base_problem.control_space();
    let c = constants.solution_lipschitz();
    let slack = 100.0 * (cfg.inner_tol + cfg.outer_tol);
    let mut records = Vec::with_capacity(members.len() * base.len());
    let mut aux_bound = 0.0_f64;
    for m in members {
        for i in 0..base.len() {
            let e_u = vs.distance(&m.trajectory.controls[i], &base.controls[i]);
            let e_x = xs.distance(&m.trajectory.states[i], &base.states[i]);
            let e_aux = vs.distance(&m.auxiliary[i], &base.controls[i]);
            aux_bound = aux_bound.max(vs.norm_of(&m.auxiliary[i]));
            let rhs = c * e_x + e_aux + slack;
            records.push(Record {
                n: m.n,
                t: base.times[i],
                e_u,
                e_x,
                e_aux,
                bound_lhs: e_u,
                bound_rhs: rhs,
                pass: e_u <= rhs,
            });
        }
    }
    let len = base.len();
    let error_at = |member: usize, node: usize| {
        let r = &records[member * len + node];
        (r.e_u, r.e_x)
    };
    let floor = slack;
    let mut decay = Vec::new();
    let mut monotone = true;
    for &t in sample_times {
        let node = base
            .node_at(t)
            .ok_or_else(|| Error::input(format!("sample time {t} is not a grid node")))?;
        let (eu0, ex0) = error_at(0, node);
        let (eu1, ex1) = error_at(members.len() - 1, node);
        let ok = |first: f64, last: f64| last <= 0.1 * first || last <= floor;
        decay.push(DecayCheck {
            t,
            e_u_first: eu0,
            e_u_last: eu1,
            e_x_first: ex0,
            e_x_last: ex1,
            pass: ok(eu0, eu1) && ok(ex0, ex1),
        });
        for (a, ma) in members.iter().enumerate() {
            if let Some(b) = members.iter().position(|mb| mb.n == 4 * ma.n) {
                let (ea, _) = error_at(a, node);
                let (eb, _) = error_at(b, node);
                if ea > floor && eb > 0.6 * ea {
                    monotone = false;
                }
            }
        }
    }
    let bounds_pass = records.iter().all(|r| r.pass);
    let decay_pass = decay.iter().all(|d| d.pass);
    Ok(ConvergenceReport {
        ns: members.iter().map(|m| m.n).collect(),
        records,
        decay,
        solution_lipschitz: c,
        slack,
        auxiliary_bound: aux_bound,
        monotone_decay: monotone,
        bounds_pass,
        decay_pass,
        passed: bounds_pass && decay_pass,
    })
}

/// Integrates the base problem and every member (in parallel over `n`) and
/// assembles the report.
pub fn run_family(
    base: &DviProblem,
    spec: &PerturbationSpec,
    ns: &[usize],
    grid: &[f64],
    scheme: Scheme,
    cfg: &QviConfig,
    sample_times: &[f64],
) -> Result<ConvergenceReport> {
    let constants = uniform_constants(base, spec)?;
    let base_traj = integrate(base, grid, scheme, cfg)?;
    let members: Vec<Member> = ns
        .par_iter()
        .map(|&n| {
            let member = || -> Result<Member> {
                let pn = build_perturbed(base, spec, n)?;
                let trajectory = integrate(&pn, grid, scheme, cfg)?;
                let auxiliary = solve_auxiliary(&base_traj, &pn, cfg)?;
                Ok(Member {
                    n,
                    trajectory,
                    auxiliary,
                })
            };
            member().map_err(|e| e.at_member(n))
        })
        .collect::<Result<_>>()?;
    certify_convergence(base, &base_traj, &members, &constants, cfg, sample_times)
}

/// `n = 1, 2, 4, …, 2^k ≤ max`.
pub fn dyadic(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |&n| Some(n * 2))
        .take_while(|&n| n <= max)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::synthetic_problem;

    #[test]
    fn zero_family_returns_the_base() {
        let base = synthetic_problem("r1-qvi").unwrap();
        let p = build_perturbed(&base, &PerturbationSpec::default(), 3).unwrap();
        assert_eq!(p.constants(), base.constants());
        assert_eq!(p.x0(), base.x0());
        assert_eq!(p.load_at(0.3), base.load_at(0.3));
    }

    #[test]
    fn dynamics_perturbation_meets_its_bound() {
        let base = synthetic_problem("r1-qvi").unwrap();
        let spec = PerturbationSpec::family("dynamics", 1.0).unwrap();
        for n in [1, 2, 7] {
            let p = build_perturbed(&base, &spec, n).unwrap();
            for &(x, u) in &[(0.5, -0.2), (-1.0, 0.3), (2.0, 0.0)] {
                let (xv, uv) = (Vector::from_element(1, x), Vector::from_element(1, u));
                let diff = (p.dynamics(0.1, &xv, &uv) - base.dynamics(0.1, &xv, &uv)).norm();
                let bound = (x.abs() + u.abs() + 1.0) / n as f64;
                assert!(diff <= bound + 1e-15);
            }
            // equality along the witness direction
            let xv = Vector::from_element(1, 2.0);
            let uv = Vector::zeros(1);
            let diff = (p.dynamics(0.0, &xv, &uv) - base.dynamics(0.0, &xv, &uv)).norm();
            assert!((diff - 3.0 / n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn gap_outside_uniform_bounds_is_rejected() {
        let base = synthetic_problem("r1-qvi").unwrap();
        let mut spec = PerturbationSpec::family("gap", 1.0).unwrap();
        spec.gap_bounds = Some([0.5, 1.5]);
        let err = build_perturbed(&base, &spec, 1).unwrap_err();
        assert!(err.is_configuration() && err.to_string().contains("M₁"));
        assert!(build_perturbed(&base, &spec, 2).is_ok());
    }

    #[test]
    fn dyadic_sequence() {
        assert_eq!(dyadic(64), vec![1, 2, 4, 8, 16, 32, 64]);
    }
}

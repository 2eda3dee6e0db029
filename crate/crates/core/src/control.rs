//! Optimal control of the rod through its load amplitude `a` and gap `G`:
//! minimize `J(q) = (u_L(t; q) − φ)² + ρ‖q‖²` over the box
//! `U = [a_min, a_max] × [G_min, G_max]`.
//!
//! The reduced cost is evaluated by a full time integration per `q`. The
//! minimizer is located by an exhaustive grid followed by a bounded
//! Nelder–Mead descent in normalized coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dvi::{integrate, uniform_grid, Scheme};
use crate::error::{Error, Result};
use crate::format;
use crate::rod::{RodConfig, RodProblem};
use crate::vi::QviConfig;

fn default_grid() -> usize {
    15
}

fn default_refine() -> bool {
    true
}

/// Control set, target and cost weights, as read from a `[control]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub amp_min: f64,
    pub amp_max: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    /// φ: desired tip displacement.
    pub target: f64,
    /// Evaluation time t.
    pub time: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_refine")]
    pub refine: bool,
}

impl ControlSpec {
    pub const PARAMS: [&'static str; 2] = ["amplitude", "gap"];

    pub fn lower(&self) -> [f64; 2] {
        [self.amp_min, self.gap_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.amp_max, self.gap_max]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.amp_min, self.amp_max, self.gap_min, self.gap_max, self.target, self.time, self.rho];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("control bounds, target, time and rho must be finite"));
        }
        if self.amp_min > self.amp_max || self.gap_min > self.gap_max {
            return Err(Error::config("control bounds must be ordered"));
        }
        if !(self.gap_min > 0.0) {
            return Err(Error::config("gap_min must be positive"));
        }
        if !(self.time > 0.0) {
            return Err(Error::config("evaluation time must be positive"));
        }
        if self.rho < 0.0 {
            return Err(Error::config("rho must be nonnegative"));
        }
        if self.grid < 3 {
            return Err(Error::config("grid must have at least 3 points per parameter"));
        }
        Ok(())
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        q.len() == 2 && (0..2).all(|i| q[i] >= lo[i] - 1e-12 && q[i] <= hi[i] + 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Grid,
    Refine,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub q: Vec<f64>,
    /// `+∞` for a failed evaluation.
    pub j: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlResult {
    pub q_star: Vec<f64>,
    pub j_star: f64,
    pub grid_min: f64,
    pub method: Phase,
    pub evaluations: Vec<Evaluation>,
    /// Grid points within 1e-10 of the best grid value.
    pub ties: Vec<Vec<f64>>,
    pub failures: usize,
}

impl ControlResult {
    pub fn to_json(&self) -> serde_json::Value {
        let j = |v: f64| if v.is_finite() { json!(v) } else { json!("inf") };
        json!({
            "q_star": self.q_star,
            "J_star": self.j_star,
            "grid_min": self.grid_min,
            "method": self.method,
            "params": ControlSpec::PARAMS,
            "ties": self.ties,
            "failures": self.failures,
            "evaluations": self.evaluations.iter().map(|e| json!({
                "q": e.q, "J": j(e.j), "phase": e.phase,
            })).collect::<Vec<_>>(),
        })
    }

    /// Grid evaluations as `amplitude,gap,J`.
    pub fn grid_csv(&self) -> String {
        let mut out = format::row(["amplitude", "gap", "J"]);
        for e in self.evaluations.iter().filter(|e| e.phase == Phase::Grid) {
            out.push_str(&format::row([format::float(e.q[0]), format::float(e.q[1]), format::float(e.j)]));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LscVerdict {
    pub limit_cost: f64,
    pub tail_min: f64,
    pub slack: f64,
    pub pass: bool,
}

/// A control problem: spec, base rod and the discretization of `[0, t]`.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub spec: ControlSpec,
    pub base: RodConfig,
    pub steps: usize,
    pub scheme: Scheme,
    pub solver: QviConfig,
}

impl ControlProblem {
    pub fn new(spec: ControlSpec, base: RodConfig, steps: usize, scheme: Scheme, solver: QviConfig) -> Result<Self> {
        spec.validate()?;
        if steps == 0 {
            return Err(Error::config("control integration needs at least one step"));
        }
        Ok(ControlProblem {
            spec,
            base,
            steps,
            scheme,
            solver,
        })
    }

    /// Tip displacement `u_L(t; q)`.
    pub fn tip(&self, q: &[f64]) -> Result<f64> {
        if !self.spec.contains(q) {
            return Err(Error::input(format!("control {q:?} outside U")));
        }
        let run = || -> Result<f64> {
            let mut cfg = self.base.clone();
            cfg.f0_amplitude = q[0];
            cfg.gap = q[1];
            let rod = RodProblem::assemble(&cfg)?;
            let tr = integrate(
                rod.problem(),
                &uniform_grid(self.steps, self.spec.time),
                self.scheme,
                &self.solver,
            )?;
            Ok(tr.controls.last().expect("nonempty grid")[rod.contact_dof()])
        };
        run().map_err(|e| e.at_control(q))
    }

    /// `J(q) = (u_L(t; q) − φ)² + ρ‖q‖²`.
    pub fn evaluate(&self, q: &[f64]) -> Result<f64> {
        let tip = self.tip(q)?;
        Ok((tip - self.spec.target).powi(2) + self.spec.rho * (q[0] * q[0] + q[1] * q[1]))
    }

    fn to_q(&self, y: &[f64]) -> Vec<f64> {
        let (lo, hi) = (self.spec.lower(), self.spec.upper());
        let mut q = lo.to_vec();
        for (k, &d) in self.active().iter().enumerate() {
            q[d] = lo[d] + y[k].clamp(0.0, 1.0) * (hi[d] - lo[d]);
        }
        q
    }

    fn active(&self) -> Vec<usize> {
        let (lo, hi) = (self.spec.lower(), self.spec.upper());
        (0..2).filter(|&i| hi[i] > lo[i]).collect()
    }

    pub fn optimize(&self) -> Result<ControlResult> {
        let g = self.spec.grid;
        let active = self.active();
        let d = active.len();
        let total = g.pow(d as u32);
        let points: Vec<Vec<f64>> = (0..total)
            .map(|idx| {
                let mut y = vec![0.0; d];
                let mut rest = idx;
                for k in (0..d).rev() {
                    y[k] = (rest % g) as f64 / (g - 1) as f64;
                    rest /= g;
                }
                y
            })
            .collect();
        let results: Vec<Result<f64>> = points.par_iter().map(|y| self.evaluate(&self.to_q(y))).collect();
        let mut failures = 0;
        let mut last_error = None;
        let mut evaluations = Vec::with_capacity(total);
        for (y, r) in points.iter().zip(results) {
            let j = match r {
                Ok(j) => j,
                Err(e) => {
                    failures += 1;
                    last_error = Some(e);
                    f64::INFINITY
                }
            };
            evaluations.push(Evaluation {
                q: self.to_q(y),
                j,
                phase: Phase::Grid,
            });
        }
        if failures * 10 > total {
            return Err(last_error.expect("failures recorded"));
        }
        let (best_idx, grid_min) = evaluations
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, e)| if e.j < acc.1 { (i, e.j) } else { acc });
        if !grid_min.is_finite() {
            return Err(Error::input("every grid evaluation failed"));
        }
        let ties = evaluations
            .iter()
            .filter(|e| e.j <= grid_min + 1e-10)
            .map(|e| e.q.clone())
            .collect();
        let mut result = ControlResult {
            q_star: evaluations[best_idx].q.clone(),
            j_star: grid_min,
            grid_min,
            method: Phase::Grid,
            evaluations,
            ties,
            failures,
        };
        if self.spec.refine && d > 0 {
            // Plateaus are common once the tip sits on the obstacle, so the
            // descent is started from the d + 1 best grid points.
            let mut order: Vec<usize> = (0..total).filter(|&i| result.evaluations[i].j.is_finite()).collect();
            order.sort_by(|&a, &b| result.evaluations[a].j.total_cmp(&result.evaluations[b].j).then(a.cmp(&b)));
            let step = 1.0 / (g - 1) as f64;
            for &idx in order.iter().take(d + 1) {
                let mut log = Vec::new();
                let (y, j) = nelder_mead(
                    |y| {
                        let q = self.to_q(y);
                        let j = self.evaluate(&q).unwrap_or(f64::INFINITY);
                        log.push(Evaluation {
                            q,
                            j,
                            phase: Phase::Refine,
                        });
                        j
                    },
                    &points[idx],
                    result.evaluations[idx].j,
                    step,
                    200 * d,
                );
                result.evaluations.extend(log);
                if j < result.j_star {
                    result.j_star = j;
                    result.q_star = self.to_q(&y);
                    result.method = Phase::Refine;
                }
            }
        }
        Ok(result)
    }

    /// Checks `min_{tail} J(qₙ) ≥ J(q) − slack` on the last quarter of the
    /// sequence.
    pub fn lsc_probe(&self, q: &[f64], sequence: &[Vec<f64>]) -> Result<LscVerdict> {
        if sequence.is_empty() {
            return Err(Error::input("lsc probe needs a nonempty sequence"));
        }
        if let Some(bad) = std::iter::once(q).chain(sequence.iter().map(|v| v.as_slice())).find(|v| !self.spec.contains(v)) {
            return Err(Error::input(format!("sequence point {bad:?} leaves U")));
        }
        let limit = self.evaluate(q)?;
        let tail_len = sequence.len().div_ceil(4);
        let tail = &sequence[sequence.len() - tail_len..];
        let costs: Vec<f64> = tail.par_iter().map(|p| self.evaluate(p)).collect::<Result<_>>()?;
        let tail_min = costs.into_iter().fold(f64::INFINITY, f64::min);
        let slack = 100.0 * (self.solver.inner_tol + self.solver.outer_tol);
        Ok(LscVerdict {
            limit_cost: limit,
            tail_min,
            slack,
            pass: tail_min >= limit - slack,
        })
    }

    /// Five sequences converging inside `U`: constant at `q0`, two straight
    /// approaches to `q0`, and approaches to the `G = G_min` and
    /// `a = a_max` faces that become constant after four terms.
    pub fn canonical_sequences(&self, q0: &[f64], len: usize) -> Vec<(&'static str, Vec<f64>, Vec<Vec<f64>>)> {
        let (lo, hi) = (self.spec.lower(), self.spec.upper());
        let clamp = |q: [f64; 2]| vec![q[0].clamp(lo[0], hi[0]), q[1].clamp(lo[1], hi[1])];
        let span = [hi[0] - lo[0], hi[1] - lo[1]];
        let approach = |dir: [f64; 2]| {
            (1..=len)
                .map(|n| {
                    let s = 0.25 / n as f64;
                    clamp([q0[0] + s * dir[0] * span[0], q0[1] + s * dir[1] * span[1]])
                })
                .collect::<Vec<_>>()
        };
        let face = |axis: usize, target: f64| {
            let limit = {
                let mut q = q0.to_vec();
                q[axis] = target;
                q
            };
            let seq = (1..=len)
                .map(|n| {
                    let mut q = q0.to_vec();
                    let w = (4.0 - n as f64).max(0.0) / 4.0;
                    q[axis] = target + w * (q0[axis] - target);
                    q
                })
                .collect::<Vec<_>>();
            (limit, seq)
        };
        let (gap_limit, gap_seq) = face(1, lo[1]);
        let (amp_limit, amp_seq) = face(0, hi[0]);
        vec![
            ("constant", q0.to_vec(), vec![q0.to_vec(); len]),
            ("amplitude-approach", q0.to_vec(), approach([1.0, 0.0])),
            ("diagonal-approach", q0.to_vec(), approach([-1.0, 1.0])),
            ("gap-to-lower-bound", gap_limit, gap_seq),
            ("amplitude-to-upper-bound", amp_limit, amp_seq),
        ]
    }
}

/// Nelder–Mead on `[0,1]^d` with every trial point clamped into the box,
/// restarted from the incumbent while it keeps improving (clamping can
/// flatten the simplex onto a face). Returns the best point and value seen.
fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    start_value: f64,
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let mut best = (start.to_vec(), start_value);
    let mut used = 0;
    let mut step = step;
    while used < max_evals {
        let (y, v, evals) = nelder_mead_pass(&mut f, &best.0, best.1, step, max_evals - used);
        used += evals;
        let progressed = v < best.1 - 1e-14 * (1.0 + best.1.abs());
        if v < best.1 {
            best = (y, v);
        }
        if progressed {
            continue;
        } else if step > 1e-6 {
            step *= 0.1;
        } else {
            break;
        }
    }
    best
}

fn nelder_mead_pass(
    f: &mut impl FnMut(&[f64]) -> f64,
    start: &[f64],
    start_value: f64,
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize) {
    let d = start.len();
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), start_value)];
    let mut evals = 0;
    for i in 0..d {
        let mut p = start.to_vec();
        p[i] = if p[i] <= 0.5 { p[i] + step } else { p[i] - step };
        let v = f(&p);
        evals += 1;
        simplex.push((p, v));
    }
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < 1e-12 || (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(p, _)| p[k]).sum::<f64>() / d as f64)
            .collect();
        let worst_p = simplex[d].0.clone();
        let reflected = clamp(combine(&centroid, &worst_p, -1.0));
        let fr = f(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = clamp(combine(&centroid, &worst_p, -2.0));
            let fe = f(&expanded);
            evals += 1;
            simplex[d] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
        } else {
            let (toward, ft) = if fr < worst { (reflected.clone(), fr) } else { (worst_p.clone(), worst) };
            let contracted = clamp(combine(&centroid, &toward, 0.5));
            let fc = f(&contracted);
            evals += 1;
            if fc < ft {
                simplex[d] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let p = clamp(combine(&anchor, &item.0, 0.5));
                    let v = f(&p);
                    evals += 1;
                    *item = (p, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (y, v) = simplex.swap_remove(0);
    (y, v, evals)
}

//! A fast self-check suite over every component, with deterministic output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::control::{ControlProblem, ControlSpec};
use crate::dvi::{integrate, observed_order, uniform_grid, Order, Scheme, Theta};
use crate::error::Result;
use crate::oracle::{brute_force_qvi, brute_force_vi, registered_instances, synthetic_problem};
use crate::perturbation::{dyadic, run_family, PerturbationSpec};
use crate::rod::{RodConfig, RodProblem};
use crate::space::Vector;
use crate::vi::QviConfig;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn summary(&self) -> String {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        if failed.is_empty() {
            format!("PASS: {} checks", self.checks.len())
        } else {
            format!("FAIL: {} of {} checks ({})", failed.len(), self.checks.len(), failed.join(", "))
        }
    }
}

type CheckFn = fn(&QviConfig) -> Result<(bool, Value)>;

pub fn run_verify(seed: u64) -> VerifyReport {
    let cfg = QviConfig {
        seed,
        ..QviConfig::default()
    };
    let suite: [(&'static str, CheckFn); 8] = [
        ("oracle-equivalence", check_oracles),
        ("outer-contraction", check_contraction),
        ("uniqueness", check_uniqueness),
        ("temporal-order", check_order),
        ("hypotheses", check_hypotheses),
        ("contact-physics", check_contact),
        ("perturbation-convergence", check_perturbation),
        ("optimal-control", check_control),
    ];
    let checks: Vec<Check> = suite
        .par_iter()
        .map(|(name, f)| match f(&cfg) {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check {
                name,
                passed: false,
                detail: json!({ "error": e.to_string() }),
            },
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    VerifyReport { seed, checks, passed }
}

fn check_oracles(cfg: &QviConfig) -> Result<(bool, Value)> {
    let mut worst = 0.0_f64;
    let mut rows = Vec::new();
    for inst in registered_instances() {
        let oracle = if inst.is_coupled() {
            brute_force_qvi(&inst)?
        } else {
            brute_force_vi(&inst)?
        };
        let u = inst.solve(cfg, None)?.u;
        let err = (&u - &oracle).amax();
        worst = worst.max(err);
        rows.push(json!({ "instance": inst.name, "error": err }));
    }
    Ok((worst <= 2e-4 + 1e-8, json!({ "max_error": worst, "instances": rows })))
}

/// Rod at rest under a constant load large enough to penetrate, with the
/// coupling chosen so that `β/m = ratio`.
pub fn contraction_rod(ratio: f64) -> RodConfig {
    RodConfig {
        theta: Theta::Const,
        f0_amplitude: 1.0,
        c2: ratio,
        ..RodConfig::smoke()
    }
}

fn check_contraction(cfg: &QviConfig) -> Result<(bool, Value)> {
    let mut ok = true;
    let mut rows = Vec::new();
    for ratio in [0.2, 0.5, 0.8] {
        let rod = RodProblem::assemble(&contraction_rod(ratio))?;
        let p = rod.problem();
        let c = p.constants();
        let sol = p.solve_at(0.0, p.x0(), cfg, None)?;
        let rate = sol.observed_rate();
        let pass = rate <= c.beta / c.m + 0.05 && sol.outer_iterations >= 3;
        ok &= pass;
        rows.push(json!({ "beta_over_m": c.beta / c.m, "rate": rate, "outer_iterations": sol.outer_iterations }));
    }
    Ok((ok, json!(rows)))
}

fn random_start(dim: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0))
}

fn check_uniqueness(cfg: &QviConfig) -> Result<(bool, Value)> {
    let mut worst = 0.0_f64;
    for (k, inst) in registered_instances().iter().enumerate() {
        let a = inst.solve(cfg, None)?.u;
        let b = inst.solve(cfg, Some(&random_start(inst.dim(), cfg.seed + k as u64)))?.u;
        let setup = inst.setup()?;
        worst = worst.max(setup.set.space().norm(&(a - b))?);
    }
    for ratio in [0.2, 0.5, 0.8] {
        let rod = RodProblem::assemble(&contraction_rod(ratio))?;
        let p = rod.problem();
        let n = rod.elements();
        let a = p.solve_at(0.0, p.x0(), cfg, None)?.u;
        let b = p.solve_at(0.0, p.x0(), cfg, Some(&(random_start(n, cfg.seed) * 0.1)))?.u;
        worst = worst.max(p.control_space().norm(&(a - b))?);
    }
    Ok((worst <= 10.0 * cfg.outer_tol, json!({ "max_distance": worst })))
}

fn check_order(cfg: &QviConfig) -> Result<(bool, Value)> {
    let p = synthetic_problem("exp-decay")?;
    let x_ref = Vector::from_element(1, (-1.0f64).exp());
    let u_ref = Vector::zeros(1);
    let euler = observed_order(&p, Scheme::ExplicitEuler, 20, 1.0, 4, (&x_ref, &u_ref), cfg)?;
    let heun = observed_order(&p, Scheme::Heun, 20, 1.0, 4, (&x_ref, &u_ref), cfg)?;
    let inside = |o: Order, lo: f64, hi: f64| matches!(o, Order::Slope(s) if s >= lo && s <= hi);
    Ok((
        inside(euler.order, 0.8, 1.2) && inside(heun.order, 1.7, 2.3),
        json!({ "euler": euler, "heun": heun }),
    ))
}

fn check_hypotheses(cfg: &QviConfig) -> Result<(bool, Value)> {
    let mut ok = true;
    let mut rows = Vec::new();
    let rod = RodProblem::assemble(&RodConfig::smoke())?;
    let problems = [
        ("rod", rod.into_problem()),
        ("r1-qvi", synthetic_problem("r1-qvi")?),
        ("r2-qvi", synthetic_problem("r2-qvi")?),
    ];
    for (name, p) in problems {
        let r = p.check_hypotheses(1000, cfg.seed);
        ok &= r.passed;
        rows.push(json!({ "problem": name, "report": r }));
    }
    Ok((ok, json!(rows)))
}

fn check_contact(cfg: &QviConfig) -> Result<(bool, Value)> {
    let rod = RodProblem::assemble(&RodConfig::smoke())?;
    let p = rod.problem();
    let tr = integrate(p, &uniform_grid(200, 1.0), Scheme::Heun, cfg)?;
    let n = rod.elements();
    let g = rod.config().gap;
    let xi_monotone = tr.states.windows(2).all(|w| w[1][n] >= w[0][n]);
    let feasible = tr.controls.iter().all(|u| u[rod.contact_dof()] <= g + 1e-12);
    let mut worst = 0.0_f64;
    for i in 0..tr.len() {
        let d = rod.contact_diagnostics(&tr.states[i], &tr.controls[i], tr.times[i], cfg)?;
        worst = worst.max(d.max_residual() / d.load_scale);
    }
    Ok((
        xi_monotone && feasible && worst <= 1e-6,
        json!({ "xi_nondecreasing": xi_monotone, "gap_respected": feasible, "max_relative_residual": worst }),
    ))
}

fn check_perturbation(cfg: &QviConfig) -> Result<(bool, Value)> {
    let rod_cfg = RodConfig {
        elements: 10,
        ..RodConfig::smoke()
    };
    let base = RodProblem::assemble(&rod_cfg)?.into_problem();
    let mut spec = PerturbationSpec::family("joint", 0.5)?;
    spec.gap_bounds = Some([0.2, 0.5]);
    let report = run_family(
        &base,
        &spec,
        &dyadic(64),
        &uniform_grid(100, 1.0),
        Scheme::Heun,
        cfg,
        &[0.25, 0.5, 1.0],
    )?;
    Ok((report.passed, report.summary_json()))
}

fn check_control(cfg: &QviConfig) -> Result<(bool, Value)> {
    let base = RodConfig {
        elements: 10,
        ..RodConfig::smoke()
    };
    let mut spec = ControlSpec {
        amp_min: 0.5,
        amp_max: 2.5,
        gap_min: 0.15,
        gap_max: 0.35,
        target: 0.0,
        time: 0.5,
        rho: 0.0,
        grid: 5,
        refine: true,
    };
    let q0 = [1.7, 0.3];
    let probe = ControlProblem::new(spec.clone(), base.clone(), 20, Scheme::Heun, cfg.clone())?;
    spec.target = probe.tip(&q0)?;
    let problem = ControlProblem::new(spec, base, 20, Scheme::Heun, cfg.clone())?;
    let result = problem.optimize()?;
    let dominates = result
        .evaluations
        .iter()
        .all(|e| result.j_star <= e.j);
    Ok((
        result.j_star <= 1e-8 && dominates,
        json!({ "target": problem.spec.target, "q_star": result.q_star, "J_star": result.j_star }),
    ))
}

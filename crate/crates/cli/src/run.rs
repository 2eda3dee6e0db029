use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dqvi_core::oracle::synthetic_problem;
use dqvi_core::perturbation::{dyadic, run_family};
use dqvi_core::verify::run_verify;
use dqvi_core::{integrate, uniform_grid, ControlProblem, DviProblem, Error, RodProblem};
use serde_json::{json, Value};

use crate::scenario::{self, Kind, Model, Scenario};

const DEFAULT_OUT: &str = "dqvi-out";

enum Failure {
    /// Exit 2: the scenario cannot be run as written.
    Config(String),
    /// Exit 1: the solvers failed or a check did not pass.
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_configuration() {
            Failure::Config(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

pub fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    match execute(path, out, seed) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Runs the scenario; `Ok(false)` means it ran but its checks failed.
fn execute(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<bool, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut sc = scenario::parse(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = seed.or(sc.seed) {
        sc.solver.seed = s;
    }
    let dir = out
        .or_else(|| sc.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    match sc.kind {
        Kind::Solve => solve(&sc, &dir),
        Kind::Perturb => perturb(&sc, &dir),
        Kind::Control => control(&sc, &dir),
        Kind::Verify => verify(&sc, &dir),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Solver(format!("cannot write {}: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write(dir, name, &text)
}

fn build(model: &Model) -> Result<(DviProblem, Option<RodProblem>), Failure> {
    Ok(match model {
        Model::Rod(cfg) => {
            let rod = RodProblem::assemble(cfg)?;
            (rod.problem().clone(), Some(rod))
        }
        Model::Instance(tag) => (synthetic_problem(tag)?, None),
    })
}

fn describe(model: &Model) -> Value {
    match model {
        Model::Rod(cfg) => json!({
            "rod": cfg,
            "load_channel": "uniform body force of amplitude f0_amplitude; no surface traction",
        }),
        Model::Instance(tag) => json!({ "instance": tag }),
    }
}

fn solve(sc: &Scenario, dir: &Path) -> Result<bool, Failure> {
    let model = sc.model.as_ref().expect("checked at parse time");
    let (problem, rod) = build(model)?;
    let grid = uniform_grid(sc.grid.steps, sc.grid.horizon);
    let tr = integrate(&problem, &grid, sc.grid.scheme, &sc.solver)?;
    write(dir, "trajectory.csv", &tr.to_csv())?;
    let last = tr.len() - 1;
    let contact = match &rod {
        Some(rod) => json!(rod.contact_diagnostics(&tr.states[last], &tr.controls[last], tr.times[last], &sc.solver)?),
        None => Value::Null,
    };
    let max_residual = tr.stats.iter().map(|s| s.residual).fold(f64::NEG_INFINITY, f64::max);
    let result = json!({
        "kind": "solve",
        "model": describe(model),
        "grid": { "steps": sc.grid.steps, "horizon": sc.grid.horizon, "scheme": sc.grid.scheme },
        "solver": sc.solver,
        "constants": problem.constants(),
        "final": {
            "t": tr.times[last],
            "state": tr.states[last].as_slice(),
            "control": tr.controls[last].as_slice(),
        },
        "max_residual": max_residual,
        "max_outer_iterations": tr.stats.iter().map(|s| s.outer_iterations).max(),
        "final_contact": contact,
    });
    write_json(dir, "result.json", &result)?;
    println!("solve: {} nodes written to {}", tr.len(), dir.display());
    Ok(true)
}

fn perturb(sc: &Scenario, dir: &Path) -> Result<bool, Failure> {
    let model = sc.model.as_ref().expect("checked at parse time");
    let section = sc.perturb.as_ref().expect("checked at parse time");
    let spec = section.resolve().map_err(Failure::Config)?;
    let (problem, _) = build(model)?;
    let grid = uniform_grid(sc.grid.steps, sc.grid.horizon);
    let report = run_family(
        &problem,
        &spec,
        &dyadic(section.max_n),
        &grid,
        sc.grid.scheme,
        &sc.solver,
        &section.times,
    )?;
    write(dir, "report.csv", &report.to_csv())?;
    let result = json!({
        "kind": "perturb",
        "model": describe(model),
        "spec": spec,
        "summary": report.summary_json(),
    });
    write_json(dir, "result.json", &result)?;
    println!(
        "{}: perturbation family over n = 1..{} ({} records)",
        if report.passed { "PASS" } else { "FAIL" },
        report.ns.last().copied().unwrap_or(0),
        report.records.len()
    );
    Ok(report.passed)
}

fn control(sc: &Scenario, dir: &Path) -> Result<bool, Failure> {
    let spec = sc.control.clone().expect("checked at parse time");
    let problem = ControlProblem::new(spec, sc.control_rod(), sc.grid.steps, sc.grid.scheme, sc.solver.clone())?;
    let result = problem.optimize()?;
    write(dir, "grid.csv", &result.grid_csv())?;
    let mut json = result.to_json();
    json["kind"] = json!("control");
    json["spec"] = json!(problem.spec);
    write_json(dir, "result.json", &json)?;
    println!(
        "control: J* = {:.6e} at amplitude {:.6e}, gap {:.6e} ({} evaluations)",
        result.j_star,
        result.q_star[0],
        result.q_star[1],
        result.evaluations.len()
    );
    Ok(true)
}

fn verify(sc: &Scenario, dir: &Path) -> Result<bool, Failure> {
    let report = run_verify(sc.solver.seed);
    write_json(dir, "verify.json", &json!(report))?;
    println!("{}", report.summary());
    Ok(report.passed)
}

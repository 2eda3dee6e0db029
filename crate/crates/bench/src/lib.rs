//! Shared fixtures for the benchmarks.

use dqvi_core::oracle::{registered_instances, OracleInstance};
use dqvi_core::{integrate, uniform_grid, QviConfig, RodConfig, RodProblem, Scheme, Vector};

/// Smoke rod with `elements` elements.
pub fn rod(elements: usize) -> RodProblem {
    RodProblem::assemble(&RodConfig {
        elements,
        ..RodConfig::smoke()
    })
    .expect("smoke rod assembles")
}

/// State of `rod` after integrating to `t` in 20 Heun steps, so the tip is loaded.
pub fn loaded_state(rod: &RodProblem, t: f64) -> Vector {
    let tr = integrate(rod.problem(), &uniform_grid(20, t), Scheme::Heun, &QviConfig::default())
        .expect("smoke rod integrates");
    tr.states[tr.len() - 1].clone()
}

pub fn instance(name: &str) -> OracleInstance {
    registered_instances()
        .into_iter()
        .find(|i| i.name == name)
        .unwrap_or_else(|| panic!("no instance named {name}"))
}

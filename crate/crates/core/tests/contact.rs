//! One-element rod checked against a grid search on its energy
//! `½E u² + σu + ½k (u⁺)² + h(ξ, u⁺)·u⁺ − f u` over `u ≤ G`.

use dqvi_core::{Error, QviConfig, RodConfig, RodProblem, Theta, Vector};

const SPACING: f64 = 1e-5;

fn single_element(amplitude: f64) -> RodConfig {
    RodConfig {
        elements: 1,
        length: 1.0,
        modulus: dqvi_core::rod::Field::Uniform(1.0),
        stiffness_k: 0.5,
        gap: 0.25,
        h0: 0.2,
        c1: 0.5,
        c2: 0.1,
        theta: Theta::Ramp,
        f0_amplitude: amplitude,
        ..RodConfig::smoke()
    }
}

/// Fixed point of the frozen-yield grid minimization.
fn grid_oracle(cfg: &RodConfig, sigma: f64, xi: f64, f: f64) -> f64 {
    let e = 1.0 / cfg.length;
    let (k, g) = (cfg.stiffness_k, cfg.gap);
    let lo = -5.0;
    let count = ((g - lo) / SPACING).floor() as usize;
    let mut u = 0.0_f64;
    for _ in 0..200 {
        let omega = cfg.hardening(xi, u.max(0.0));
        let energy = |v: f64| 0.5 * e * v * v + sigma * v + 0.5 * k * v.max(0.0).powi(2) + omega * v.max(0.0) - f * v;
        let mut best = (g, energy(g));
        for i in 0..=count {
            let v = lo + i as f64 * SPACING;
            let en = energy(v);
            if en < best.1 {
                best = (v, en);
            }
        }
        let done = (best.0 - u).abs() <= SPACING;
        u = best.0;
        if done {
            break;
        }
    }
    u
}

struct Case {
    rod: RodProblem,
    x: Vector,
    u: Vector,
    oracle: f64,
}

fn solve_case(amplitude: f64) -> Case {
    let cfg = single_element(amplitude);
    let rod = RodProblem::assemble(&cfg).unwrap();
    let (sigma, xi) = (0.1, 0.3);
    let x = Vector::from_vec(vec![sigma, xi]);
    // θ(1) = 1 and the P1 mass matrix puts half of a uniform load on the tip.
    let f = amplitude * cfg.length / 2.0;
    assert!((rod.problem().load_at(1.0)[0] - f).abs() <= 1e-14);
    let u = rod.problem().solve_at(1.0, &x, &QviConfig::default(), None).unwrap().u;
    let oracle = grid_oracle(&cfg, sigma, xi, f);
    assert!((u[0] - oracle).abs() <= 2.0 * SPACING, "{} vs {oracle}", u[0]);
    Case { rod, x, u, oracle }
}

#[test]
fn no_contact_regime_has_a_vanishing_multiplier() {
    let c = solve_case(-2.0);
    assert!(c.oracle < 0.0);
    let d = c.rod.contact_diagnostics(&c.x, &c.u, 1.0, &QviConfig::default()).unwrap();
    assert!(d.tip < 0.0);
    assert!(d.multiplier.abs() <= 1e-8 * d.load_scale, "{d:?}");
    assert_eq!(d.eta, 0.0);
    assert!(d.max_residual() <= 1e-8 * d.load_scale, "{d:?}");
}

#[test]
fn clamped_regime_sits_exactly_on_the_gap() {
    let c = solve_case(20.0);
    let d = c.rod.contact_diagnostics(&c.x, &c.u, 1.0, &QviConfig::default()).unwrap();
    assert_eq!(d.tip, 0.25);
    assert_eq!(c.oracle, 0.25);
    assert!(d.total_reaction < 0.0, "{d:?}");
    assert!(d.complementarity_residual <= 1e-8 * d.load_scale);
    assert!(d.max_residual() <= 1e-8 * d.load_scale, "{d:?}");
}

#[test]
fn intermediate_penetration_balances_the_yield() {
    let c = solve_case(1.0);
    let d = c.rod.contact_diagnostics(&c.x, &c.u, 1.0, &QviConfig::default()).unwrap();
    assert!(d.tip > 0.0 && d.tip < 0.25, "{d:?}");
    // E u + σ + k u + h0 + c1 ξ + c2 u = f  ⇒  u = (0.5 − 0.1 − 0.35)/1.6
    assert!((d.tip - 0.05 / 1.6).abs() <= 1e-8);
    assert!(d.total_reaction.abs() <= 1e-8 * d.load_scale, "{d:?}");
    assert_eq!(d.eta, c.rod.config().hardening(0.3, d.tip));
}

#[test]
fn uncertified_points_are_refused() {
    let c = solve_case(1.0);
    let wrong = Vector::from_element(1, 0.2);
    match c.rod.contact_diagnostics(&c.x, &wrong, 1.0, &QviConfig::default()) {
        Err(Error::Certificate(_)) => {}
        other => panic!("expected a certificate error, got {other:?}"),
    }
}

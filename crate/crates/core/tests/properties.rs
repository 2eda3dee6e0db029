use std::sync::Arc;

use dqvi_core::oracle::registered_instances;
use dqvi_core::{
    mosco_scale, solve_qvi, AffineOperator, ConvexSet, Matrix, Qvi, QviConfig, RodConfig, RodProblem, SeparableYield,
    Space, Vector,
};
use proptest::prelude::*;

/// Minimizer of `½a u² + ω u⁺ − f u` over `u ≤ g`.
fn scalar_minimizer(a: f64, f: f64, omega: f64, g: f64) -> f64 {
    let free = if f > omega {
        (f - omega) / a
    } else if f < 0.0 {
        f / a
    } else {
        0.0
    };
    free.min(g)
}

fn spd(a: f64, b: f64, c: f64) -> Matrix {
    // [[a, b], [b, c]] with a, c > |b|
    Matrix::from_row_slice(2, 2, &[a, b, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_vi_matches_closed_form(a in 0.5..5.0f64, f in -5.0..5.0f64, omega in 0.0..2.0f64, g in -1.0..2.0f64) {
        let s = Arc::new(Space::identity(1).unwrap());
        let op = AffineOperator::linear(Matrix::from_element(1, 1, a), &s, &s).unwrap();
        let term = SeparableYield::new(vec![0], vec![omega], vec![0.0], &s).unwrap();
        let set = ConvexSet::node_upper_bound(s.clone(), 0, g).unwrap();
        let state = Vector::zeros(1);
        let load = Vector::from_element(1, f);
        let qvi = Qvi { state: &state, operator: &op, term: &term, set: &set, load: &load };
        let u = solve_qvi(&qvi, &QviConfig::default(), None).unwrap().u[0];
        prop_assert!((u - scalar_minimizer(a, f, omega, g)).abs() <= 1e-8, "{u}");
    }

    #[test]
    fn coupled_scalar_qvi_is_a_fixed_point(a in 1.0..4.0f64, f in 0.5..5.0f64, b in 0.0..1.0f64, ratio in 0.0..0.8f64) {
        let c = ratio * a;
        let s = Arc::new(Space::identity(1).unwrap());
        let op = AffineOperator::linear(Matrix::from_element(1, 1, a), &s, &s).unwrap();
        let term = SeparableYield::new(vec![0], vec![b], vec![c], &s).unwrap();
        let set = ConvexSet::whole(s.clone());
        let state = Vector::zeros(1);
        let load = Vector::from_element(1, f);
        let qvi = Qvi { state: &state, operator: &op, term: &term, set: &set, load: &load };
        let u = solve_qvi(&qvi, &QviConfig::default(), None).unwrap().u[0];
        let frozen = scalar_minimizer(a, f, (b + c * u.abs()).max(0.0), f64::INFINITY);
        prop_assert!((u - frozen).abs() <= 1e-8, "{u} vs {frozen}");
    }

    #[test]
    fn weighted_projection_is_nonexpansive(
        a in 1.0..4.0f64, b in -0.9..0.9f64, c in 1.0..4.0f64,
        g in -1.0..1.0f64, index in 0usize..2,
        v in prop::array::uniform2(-3.0..3.0f64), w in prop::array::uniform2(-3.0..3.0f64),
    ) {
        let space = Arc::new(Space::new(spd(a, b, c)).unwrap());
        let set = ConvexSet::node_upper_bound(space.clone(), index, g).unwrap();
        let (v, w) = (Vector::from_row_slice(&v), Vector::from_row_slice(&w));
        let (pv, pw) = (set.project(&v).unwrap(), set.project(&w).unwrap());
        prop_assert!(set.contains(&pv, 0.0) && pv[index] <= g);
        let lhs = space.norm(&(&pv - &pw)).unwrap();
        let rhs = space.norm(&(&v - &w)).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
        // ⟨v − Pv, z − Pv⟩ ≤ 0 for feasible z
        let z = set.project(&(&w * 2.0)).unwrap();
        prop_assert!(space.inner(&(&v - &pv), &(&z - &pv)).unwrap() <= 1e-10);
    }

    #[test]
    fn mosco_scale_lands_in_the_scaled_set(g in 0.05..2.0f64, factor in 0.2..3.0f64, v in prop::array::uniform3(-3.0..3.0f64), index in 0usize..3) {
        let gn = g * factor;
        let mut v = Vector::from_row_slice(&v);
        v[index] = v[index].min(g);
        let r = mosco_scale(g, gn, index, &v).unwrap();
        prop_assert!((&r - &v).amax() <= (factor - 1.0).abs() * v.amax() + 1e-15);
        prop_assert!(r[index] <= gn);
    }

    #[test]
    fn uniqueness_from_random_starts(start in prop::array::uniform2(-5.0..5.0f64), k in 0usize..12) {
        let inst = &registered_instances()[k];
        let cfg = QviConfig::default();
        let start = Vector::from_row_slice(&start[..inst.dim()]);
        let a = inst.solve(&cfg, None).unwrap().u;
        let b = inst.solve(&cfg, Some(&start)).unwrap().u;
        let setup = inst.setup().unwrap();
        prop_assert!(setup.set.space().norm(&(a - b)).unwrap() <= 10.0 * cfg.outer_tol);
    }
}

fn rod_with_moduli(moduli: Vec<f64>) -> RodProblem {
    let cfg = RodConfig {
        elements: moduli.len(),
        modulus: dqvi_core::rod::Field::List(moduli),
        ..RodConfig::smoke()
    };
    RodProblem::assemble(&cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rod_operator_is_strongly_monotone(
        moduli in prop::collection::vec(0.5..3.0f64, 6),
        u1 in prop::collection::vec(-0.5..0.5f64, 6),
        u2 in prop::collection::vec(-0.5..0.5f64, 6),
        sigma in prop::collection::vec(-1.0..1.0f64, 6),
        xi in 0.0..1.0f64,
    ) {
        let m_e = moduli.iter().cloned().fold(f64::INFINITY, f64::min);
        let rod = rod_with_moduli(moduli);
        let p = rod.problem();
        let mut x = Vector::from_vec(sigma);
        x = x.push(xi);
        let (u1, u2) = (Vector::from_vec(u1), Vector::from_vec(u2));
        let op = &p.data().operator;
        let diff = op.apply(&x, &u1) - op.apply(&x, &u2);
        let du = &u1 - &u2;
        let lhs = diff.dot(&du);
        let norm = p.control_space().norm(&du).unwrap();
        prop_assert!(lhs >= m_e * (1.0 - 1e-6) * norm * norm, "{lhs} < {m_e}·{}", norm * norm);
    }

    #[test]
    fn hypotheses_hold_for_any_sampling_seed(seed in any::<u64>()) {
        let rod = RodProblem::assemble(&RodConfig { elements: 8, ..RodConfig::smoke() }).unwrap();
        let report = rod.problem().check_hypotheses(1000, seed);
        prop_assert!(report.passed, "{report:?}");
    }
}

#[test]
fn registered_solutions_are_certified() {
    for inst in registered_instances() {
        let setup = inst.setup().unwrap();
        let qvi = setup.qvi();
        let cfg = QviConfig::default();
        let u = solve_qvi(&qvi, &cfg, None).unwrap().u;
        let cert = dqvi_core::certify_qvi(&qvi, &u, &cfg, 3).unwrap();
        assert!(cert.passed, "{}: {cert:?}", inst.name);
    }
    for tag in ["r1-qvi", "r2-qvi", "stationary"] {
        let p = dqvi_core::oracle::synthetic_problem(tag).unwrap();
        let r = p.check_hypotheses(1000, 5);
        assert!(r.passed && r.samples >= 1000, "{tag}: {r:?}");
    }
}

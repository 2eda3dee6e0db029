use dqvi_core::oracle::{brute_force_qvi, brute_force_vi, registered_instances};
use dqvi_core::{Matrix, QviConfig};

#[test]
fn solver_agrees_with_the_grid_oracles() {
    let cfg = QviConfig::default();
    for inst in registered_instances() {
        let oracle = if inst.is_coupled() {
            brute_force_qvi(&inst).unwrap()
        } else {
            brute_force_vi(&inst).unwrap()
        };
        let u = inst.solve(&cfg, None).unwrap().u;
        let err = (&u - &oracle).amax();
        assert!(err <= 2.0 * inst.spacing + cfg.inner_tol + cfg.outer_tol, "{}: {err}", inst.name);
    }
}

#[test]
fn coupled_instances_are_refused_by_the_plain_oracle() {
    for inst in registered_instances().into_iter().filter(|i| i.is_coupled()) {
        assert!(brute_force_vi(&inst).is_err(), "{}", inst.name);
    }
}

#[test]
fn registry_mixes_active_and_inactive_constraints() {
    let cfg = QviConfig::default();
    let instances = registered_instances();
    assert_eq!(instances.len(), 12);
    let planar = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    assert!(instances.iter().any(|i| i.matrix == planar));
    let (mut active, mut inactive) = (0, 0);
    for inst in &instances {
        let u = inst.solve(&cfg, None).unwrap().u;
        let touches = (0..inst.dim()).any(|k| (u[k] - inst.upper[k]).abs() < 1e-9 || (u[k] - inst.lower[k]).abs() < 1e-9);
        if touches {
            active += 1;
        } else {
            inactive += 1;
        }
    }
    assert!(active > 0 && inactive > 0, "{active} active, {inactive} inactive");
}

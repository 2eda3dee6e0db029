use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn dqvi(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dqvi"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run_file(file: &Path, out: &Path) -> Output {
    dqvi(&["run", file.to_str().unwrap(), "--out", out.to_str().unwrap()], &[])
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn smoke_solve_writes_one_row_per_node() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_file(&scenario("smoke.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("t,x0,"));
    assert_eq!(lines.count(), 201);
    assert!(!csv.contains('\r'));
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["final"]["t"], 1.0);
    assert!(result["final_contact"]["tip"].as_f64().unwrap() <= 0.25 + 1e-12);
}

#[test]
fn identical_scenarios_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run_file(&scenario("smoke.toml"), a.path()).status.success());
    let o = dqvi(
        &["run", scenario("smoke.toml").to_str().unwrap(), "--out", b.path().to_str().unwrap()],
        &[("DQVI_THREADS", "1")],
    );
    assert!(o.status.success());
    for name in ["trajectory.csv", "result.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn verify_passes_on_a_clean_build() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_file(&scenario("verify.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("PASS"), "{stdout}");
    assert!(tmp.path().join("verify.json").exists());
}

#[test]
fn perturbation_report_shows_decay() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_file(&scenario("perturb.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert!(rows.iter().all(|r| r[7] == "PASS"));
    let error = |n: &str, t: f64| -> (f64, f64) {
        let r = rows
            .iter()
            .find(|r| r[0] == n && (r[1].parse::<f64>().unwrap() - t).abs() < 1e-12)
            .unwrap();
        (r[2].parse().unwrap(), r[3].parse().unwrap())
    };
    // Errors at the solver slack count as zero.
    let floor = 100.0 * (1e-9 + 1e-10);
    for t in [0.25, 0.5, 1.0] {
        let (eu1, ex1) = error("1", t);
        let (eu64, ex64) = error("64", t);
        assert!(eu64 <= 0.1 * eu1 || eu64 <= floor, "t={t}: {eu64} vs {eu1}");
        assert!(ex64 <= 0.1 * ex1 || ex64 <= floor, "t={t}: {ex64} vs {ex1}");
    }
}

#[test]
fn control_writes_grid_and_result() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_file(&scenario("control.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let grid = fs::read_to_string(tmp.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 81);
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("result.json")).unwrap()).unwrap();
    let j_star = result["J_star"].as_f64().unwrap();
    let grid_min = result["grid_min"].as_f64().unwrap();
    assert!(j_star <= grid_min && j_star <= 1e-8);
}

#[test]
fn unknown_keys_exit_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_scenario(tmp.path(), "kind = \"solve\"\nextra = 1\n[rod]\nelements = 4\nmodulos = 2.0\n");
    let o = run_file(&file, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("extra") && err.contains("rod.modulos"), "{err}");
}

#[test]
fn parse_errors_report_the_position() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_scenario(tmp.path(), "kind = \"solve\"\n[grid\nsteps = 3\n");
    let o = run_file(&file, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn dominant_coupling_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_scenario(tmp.path(), "kind = \"solve\"\n[rod]\nelements = 4\nc2 = 1.5\n");
    let o = run_file(&file, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("m_E"), "{}", stderr(&o));
}

#[test]
fn solver_failure_exits_with_status_one() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_scenario(
        tmp.path(),
        "kind = \"solve\"\n[rod]\nelements = 20\n[grid]\nsteps = 10\n[solver]\nmax_inner = 1\n",
    );
    let o = run_file(&file, tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("time node"), "{}", stderr(&o));
}

#[test]
fn synthetic_instances_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_scenario(tmp.path(), "kind = \"solve\"\ninstance = \"r2-qvi\"\nseed = 4\n[grid]\nsteps = 20\n");
    let o = dqvi(
        &["run", file.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--seed", "9"],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["solver"]["seed"], 9);
    assert_eq!(result["model"]["instance"], "r2-qvi");
}

#[test]
fn bad_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dqvi(
        &["run", scenario("smoke.toml").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[("DQVI_THREADS", "0")],
    );
    assert_eq!(o.status.code(), Some(2));
}

use nullctl::config::ProblemConfig;
use nullctl::export::{control_csv, read_control_csv};
use nullctl::optimal::{solve, Problem, ProblemState};
use nullctl::oracle::{kkt_solve, relative_l2, QuadraticProgram};
use nullctl::simulation::{simulate, simulate_system, system_null_residual, null_residual};

const NEUTRAL: &str = r#"{"type": "neutral", "delays": [0, 0.6, 1], "a": [0.3, -0.5, 1.2], "d": [0.4, -0.7],
    "y": 1, "x0": {"poly": [1, 1]}, "x0_deriv": {"const": 1}, "epsilon": 0.3}"#;

const SYSTEM: &str = r#"{"type": "system", "A": [[0.8, -0.3], [1, 0]], "b": [1, 0],
    "y": [1, -0.5], "x0": [{"const": 1}, {"poly": [-0.5, 0.2]}], "epsilon": 0.3, "grid_h": 0.0005}"#;

#[test]
fn neutral_config_to_null_trajectory() {
    let loaded = ProblemConfig::from_json(NEUTRAL).unwrap().load(None).unwrap();
    let sol = solve(&loaded.problem, &loaded.state, loaded.epsilon).unwrap();
    let (Problem::Scalar(eq), ProblemState::Scalar(st)) = (&loaded.problem, &loaded.state) else {
        panic!("scalar config")
    };
    let control = read_control_csv(&control_csv(&sol.control).unwrap()).unwrap();
    let traj = simulate(eq, st, &control, sol.horizon()).unwrap();
    assert!(null_residual(&traj, sol.horizon()).unwrap() <= 1e-10);

    let qp = QuadraticProgram::for_problem(&loaded.problem, &loaded.state, loaded.epsilon).unwrap();
    let u = kkt_solve(&qp).unwrap();
    assert!(relative_l2(&u, &sol.generator).unwrap() <= 1e-3);
    assert!(qp.objective(&u) <= qp.objective(&sol.generator) + 1e-6);
}

#[test]
fn companion_system_config_to_null_trajectory() {
    let loaded = ProblemConfig::from_json(SYSTEM).unwrap().load(None).unwrap();
    assert!(loaded.transform.is_none());
    let sol = solve(&loaded.problem, &loaded.state, loaded.epsilon).unwrap();
    let (Problem::System(sys), ProblemState::System(st)) = (&loaded.problem, &loaded.state) else {
        panic!("system config")
    };
    let traj = simulate_system(sys, st, &sol.control, sol.horizon()).unwrap();
    assert!(system_null_residual(&traj, sol.horizon()).unwrap() <= 1e-4);
    assert!(sol.moment_residuals.iter().all(|r| r.abs() <= 1e-8));
}

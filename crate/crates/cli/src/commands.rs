use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use nullctl::admissible::{assemble_control_with_tol, assemble_system_control_with_tol, MomentConstraints};
use nullctl::config::{LoadedProblem, ProblemConfig};
use nullctl::export;
use nullctl::optimal::{admissible_control, constraints, solve, OptimalSolution, Problem, ProblemState};
use nullctl::oracle::{kkt_solve, relative_l2, volterra_scalar, QuadraticProgram};
use nullctl::simulation::{
    null_residual, simulate as integrate, simulate_system, system_null_residual, transform_trajectory,
};
use nullctl::spectral::{
    default_window, find_zeros, localization, verify_control_membership, Localization, Window,
};
use nullctl::{ControlSignal, Error, GridFunction};

use crate::output::Outputs;
use crate::Common;

pub const NULL_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-3;
pub const ORTHO_TOL: f64 = 1e-5;
pub const MONOTONE_MARGIN: f64 = 1e-10;
pub const GROWTH_FACTOR: f64 = 10.0;
pub const ORTHO_WITNESSES: usize = 20;
pub const OPTIMALITY_SAMPLES: usize = 100;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Verification(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) | Failure::Io(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Solver(m) => write!(f, "solver: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

struct Loaded {
    config: Value,
    inner: LoadedProblem,
}

impl Loaded {
    fn horizon(&self) -> f64 {
        self.inner.problem.horizon(self.inner.epsilon)
    }
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    let cfg = ProblemConfig::from_json(&text)?;
    let inner = cfg.load(common.h)?;
    let config = serde_json::to_value(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(Loaded { config, inner })
}

fn class_name(problem: &Problem) -> &'static str {
    match problem {
        Problem::Scalar(eq) if eq.is_simplest() => "simplest",
        Problem::Scalar(eq) if eq.is_retarded() => "retarded",
        Problem::Scalar(_) => "neutral",
        Problem::System(_) => "system",
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

/// Simulates under `control` up to `t_end`, returning the trajectory table
/// and the null residual on `[T - 1, T]` when `t_end ≥ T`.
fn run_simulation(
    loaded: &Loaded,
    control: &ControlSignal,
    t_end: f64,
) -> Result<(String, Option<f64>), Failure> {
    let horizon = loaded.horizon();
    let reaches = t_end >= horizon - 1e-9;
    match (&loaded.inner.problem, &loaded.inner.state) {
        (Problem::Scalar(eq), ProblemState::Scalar(st)) => {
            let traj = integrate(eq, st, control, t_end)?;
            let residual = if reaches { Some(null_residual(&traj, horizon)?) } else { None };
            Ok((export::trajectory_csv(&traj, eq.is_neutral())?, residual))
        }
        (Problem::System(sys), ProblemState::System(st)) => {
            let mut traj = simulate_system(sys, st, control, t_end)?;
            if let Some(g) = &loaded.inner.transform {
                let inv = g
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Failure::Solver("singular change of variables".into()))?;
                traj = transform_trajectory(&traj, &inv)?;
            }
            let residual = if reaches { Some(system_null_residual(&traj, horizon)?) } else { None };
            Ok((export::system_trajectory_csv(&traj)?, residual))
        }
        _ => Err(Failure::Config("state does not match the problem".into())),
    }
}

fn optimal_solution(loaded: &Loaded) -> Result<OptimalSolution, Failure> {
    Ok(solve(&loaded.inner.problem, &loaded.inner.state, loaded.inner.epsilon)?)
}

pub fn simulate(common: &Common, source: &str, t_end: Option<f64>) -> Result<(), Failure> {
    let loaded = load(common)?;
    let horizon = loaded.horizon();
    let control = match source {
        "zero" => ControlSignal::zero(horizon, loaded.inner.h)?,
        "optimal" => optimal_solution(&loaded)?.control,
        path => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{path}: {e}")))?;
            export::read_control_csv(&text)?
        }
    };
    let t_end = t_end.unwrap_or(horizon.min(control.horizon()));
    let (table, residual) = run_simulation(&loaded, &control, t_end)?;
    if let Some(r) = residual {
        println!("null residual on [{:.6}, {:.6}]: {r:e}", horizon - 1.0, horizon);
    }
    let mut out = Outputs::new(common.format);
    out.table("trajectory", table)?;
    let report = json!({
        "class": class_name(&loaded.inner.problem),
        "control": source,
        "t_end": t_end,
        "horizon": horizon,
        "null_residual": residual,
    });
    out.finish(common, loaded.inner.h, "simulate", &loaded.config, report)
}

pub fn optimal(common: &Common) -> Result<(), Failure> {
    let loaded = load(common)?;
    let sol = optimal_solution(&loaded)?;
    let mut summary = export::solution_summary(&sol);
    summary["class"] = json!(class_name(&loaded.inner.problem));
    if let Some(g) = &loaded.inner.transform {
        summary["transform"] = matrix_json(g);
    }
    if let Problem::System(sys) = &loaded.inner.problem {
        summary["companion_g"] = json!(sys.companion_g());
    }
    println!("energy {:e}", sol.energy);
    println!("constants {:?}", sol.constants.as_slice());
    let mut out = Outputs::new(common.format);
    out.table("control", export::control_csv(&sol.control)?)?;
    out.table("generator", export::generator_csv(&sol.generator)?)?;
    out.json("summary", &summary);
    out.finish(common, loaded.inner.h, "optimal", &loaded.config, summary.clone())
}

struct CheckResult {
    name: &'static str,
    passed: bool,
    measured: f64,
    threshold: f64,
    detail: String,
}

impl CheckResult {
    fn json(&self) -> Value {
        json!({
            "check": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "threshold": self.threshold,
            "detail": self.detail,
        })
    }
}

fn read_generator(path: &Path, template: &GridFunction) -> Result<GridFunction, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut values = Vec::new();
    for (i, row) in reader.deserialize::<(f64, f64)>().enumerate() {
        let (_, u) = row.map_err(|e| Failure::Config(format!("generator row {}: {e}", i + 2)))?;
        values.push(u);
    }
    if values.len() != template.len() {
        return Err(Failure::Config(format!(
            "generator has {} rows, the grid needs {}",
            values.len(),
            template.len()
        )));
    }
    Ok(GridFunction::from_samples(template.t_start(), template.t_end(), values)?)
}

fn check_null(loaded: &Loaded, sol: &OptimalSolution, generator: Option<&Path>) -> Result<CheckResult, Failure> {
    let (control, source) = match generator {
        None => (sol.control.clone(), "optimal generator".to_string()),
        Some(path) => {
            let u0 = read_generator(path, &sol.generator)?;
            let control = match (&loaded.inner.problem, &loaded.inner.state) {
                (Problem::Scalar(eq), ProblemState::Scalar(st)) => {
                    assemble_control_with_tol(eq, st, &u0, f64::INFINITY)?
                }
                (Problem::System(sys), ProblemState::System(st)) => {
                    assemble_system_control_with_tol(sys, st, &u0, f64::INFINITY)?
                }
                _ => return Err(Failure::Config("state does not match the problem".into())),
            };
            (control, format!("generator from {}", path.display()))
        }
    };
    let (_, residual) = run_simulation(loaded, &control, loaded.horizon())?;
    let residual = residual.unwrap_or(f64::INFINITY);
    Ok(CheckResult {
        name: "null",
        passed: residual <= NULL_TOL,
        measured: residual,
        threshold: NULL_TOL,
        detail: format!("max |x| on [T-1, T] under the {source}"),
    })
}

fn check_oracle(loaded: &Loaded, sol: &OptimalSolution) -> Result<CheckResult, Failure> {
    let qp = QuadraticProgram::for_problem(&loaded.inner.problem, &loaded.inner.state, loaded.inner.epsilon)?;
    let u = kkt_solve(&qp)?;
    let dist = relative_l2(&sol.generator, &u)?;
    Ok(CheckResult {
        name: "oracle",
        passed: dist <= ORACLE_TOL,
        measured: dist,
        threshold: ORACLE_TOL,
        detail: "relative L2 distance between the closed form and the KKT minimizer".into(),
    })
}

fn check_ortho(loaded: &Loaded, sol: &OptimalSolution, seed: u64) -> Result<CheckResult, Failure> {
    let Problem::Scalar(eq) = &loaded.inner.problem else {
        return Ok(CheckResult {
            name: "ortho",
            passed: true,
            measured: 0.0,
            threshold: ORTHO_TOL,
            detail: "not applicable to systems".into(),
        });
    };
    let report = verify_control_membership(eq, &sol.control, ORTHO_WITNESSES, seed)?;
    Ok(CheckResult {
        name: "ortho",
        passed: report.max_normalized_product <= ORTHO_TOL,
        measured: report.max_normalized_product,
        threshold: ORTHO_TOL,
        detail: format!("{} random witnesses, seed {seed}", report.witnesses),
    })
}

fn valid_epsilons(loaded: &Loaded) -> Vec<f64> {
    let h = loaded.inner.h;
    [0.5, 0.4, 0.3, 0.2, 0.1]
        .into_iter()
        .filter(|&eps| {
            let on_grid = ((eps / h).round() * h - eps).abs() <= 1e-9;
            let in_range = match &loaded.inner.problem {
                Problem::Scalar(eq) => eq.check_epsilon(eps).is_ok(),
                Problem::System(_) => eps < 1.0,
            };
            on_grid && in_range
        })
        .collect()
}

fn check_monotone(loaded: &Loaded) -> Result<CheckResult, Failure> {
    let eps = valid_epsilons(loaded);
    if loaded.inner.state.is_zero() || eps.len() < 2 {
        return Ok(CheckResult {
            name: "monotone",
            passed: true,
            measured: 0.0,
            threshold: MONOTONE_MARGIN,
            detail: "zero state or fewer than two admissible epsilons".into(),
        });
    }
    let energies = eps
        .iter()
        .map(|&e| Ok(solve(&loaded.inner.problem, &loaded.inner.state, e)?.energy))
        .collect::<Result<Vec<f64>, Failure>>()?;
    let margin = energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let reference = energies[0] * eps[0].sqrt();
    let growth = energies
        .iter()
        .zip(&eps)
        .map(|(e, x)| e * x.sqrt() / reference)
        .fold(0.0, f64::max);
    // The growth bound is stated for the simplest equation only.
    let simplest = matches!(&loaded.inner.problem, Problem::Scalar(eq) if eq.is_simplest());
    Ok(CheckResult {
        name: "monotone",
        passed: margin > MONOTONE_MARGIN && (!simplest || growth <= GROWTH_FACTOR),
        measured: margin,
        threshold: MONOTONE_MARGIN,
        detail: format!("epsilons {eps:?}, energies {energies:?}, max E*sqrt(eps) ratio {growth:.4}"),
    })
}

/// `u0 + δ` with `δ` a random smooth feasible direction of size in `[1e-4, 1]`.
pub fn random_feasible(
    mc: &MomentConstraints,
    base: &GridFunction,
    rng: &mut impl Rng,
) -> Result<GridFunction, Error> {
    let eps = base.t_end();
    let coeffs: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
    let raw = base.map(|t, _| {
        coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * (m as f64 * std::f64::consts::PI * t / eps).cos())
            .sum()
    });
    let homogeneous = MomentConstraints {
        kernels: mc.kernels.clone(),
        rhs: vec![0.0; mc.len()],
    };
    let delta = homogeneous.project(&raw)?;
    let size = 10f64.powf(rng.random_range(-4.0..0.0));
    let norm = delta.norm_l2();
    if norm == 0.0 {
        return Ok(base.clone());
    }
    base.axpy(size / norm, &delta)
}

fn check_optimality(loaded: &Loaded, sol: &OptimalSolution, seed: u64) -> Result<CheckResult, Failure> {
    let (problem, state) = (&loaded.inner.problem, &loaded.inner.state);
    let mc = constraints(problem, state, loaded.inner.epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..OPTIMALITY_SAMPLES {
        let u0 = random_feasible(&mc, &sol.generator, &mut rng)?;
        let alt = admissible_control(problem, state, &u0)?;
        worst = worst.min(alt.energy_gap(&sol.control)?);
    }
    Ok(CheckResult {
        name: "optimality",
        passed: worst > 0.0,
        measured: worst,
        threshold: 0.0,
        detail: format!("{OPTIMALITY_SAMPLES} feasible perturbations, smallest energy excess"),
    })
}

pub fn verify(common: &Common, checks: &str, generator: Option<&Path>) -> Result<(), Failure> {
    const KNOWN: [&str; 5] = ["null", "oracle", "ortho", "monotone", "optimality"];
    let selected: Vec<&str> = checks.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = selected.iter().find(|c| !KNOWN.contains(c)) {
        return Err(Failure::Config(format!("unknown check `{bad}`")));
    }
    let loaded = load(common)?;
    let sol = optimal_solution(&loaded)?;
    let mut results = Vec::new();
    for name in KNOWN.iter().filter(|k| selected.contains(k)) {
        let r = match *name {
            "null" => check_null(&loaded, &sol, generator)?,
            "oracle" => check_oracle(&loaded, &sol)?,
            "ortho" => check_ortho(&loaded, &sol, common.seed)?,
            "monotone" => check_monotone(&loaded)?,
            _ => check_optimality(&loaded, &sol, common.seed)?,
        };
        println!(
            "{:<10} {}  measured {:e}  threshold {:e}  ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.measured,
            r.threshold,
            r.detail
        );
        results.push(r);
    }
    let passed = results.iter().all(|r| r.passed);
    let report = json!({
        "passed": passed,
        "checks": results.iter().map(CheckResult::json).collect::<Vec<_>>(),
    });
    let mut out = Outputs::new(common.format);
    out.json("report", &report);
    out.finish(common, loaded.inner.h, "verify", &loaded.config, report)?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        Err(Failure::Verification(failed.join(", ")))
    }
}

fn parse_window(text: &str) -> Result<Window, Failure> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Config(format!("--window: {e}")))?;
    let [a, b, c, d] = parts[..] else {
        return Err(Failure::Config("--window needs re_min,re_max,im_min,im_max".into()));
    };
    Window::new(a, b, c, d).map_err(|e| Failure::Config(format!("--window: {e}")))
}

pub fn spectrum(common: &Common, window: Option<&str>) -> Result<(), Failure> {
    let loaded = load(common)?;
    let Problem::Scalar(eq) = &loaded.inner.problem else {
        return Err(Failure::Config("spectrum needs a scalar equation".into()));
    };
    let window = match window {
        Some(w) => parse_window(w)?,
        None => default_window(eq),
    };
    let spectrum = find_zeros(eq, &window)?;
    let loc = localization(eq);
    let kind = match loc {
        Localization::HalfPlane { .. } => "half-plane",
        Localization::Strip { .. } => "strip",
    };
    println!("{} zeros in the window (argument principle: {})", spectrum.zeros.len(), spectrum.count);
    println!("localization {}", loc.describe());
    let report = json!({
        "class": class_name(&loaded.inner.problem),
        "localization": kind,
        "localization_detail": loc.describe(),
        "window": [spectrum.window.re_min, spectrum.window.re_max, spectrum.window.im_min, spectrum.window.im_max],
        "argument_principle_count": spectrum.count,
        "zeros_found": spectrum.zeros.len(),
        "max_residual": spectrum.max_residual(),
        "multiplicity_flags": spectrum.multiplicity_flags.iter().filter(|f| **f).count(),
    });
    let mut out = Outputs::new(common.format);
    out.table("spectrum", export::spectrum_csv(&spectrum)?)?;
    out.finish(common, loaded.inner.h, "spectrum", &loaded.config, report)
}

pub fn oracle(common: &Common) -> Result<(), Failure> {
    let loaded = load(common)?;
    let (problem, state, eps) = (&loaded.inner.problem, &loaded.inner.state, loaded.inner.epsilon);
    let qp = QuadraticProgram::for_problem(problem, state, eps)?;
    let u = kkt_solve(&qp)?;
    let sol = optimal_solution(&loaded)?;
    let residuals = qp.constraints.residuals(&u)?;
    let mut report = json!({
        "class": class_name(problem),
        "kkt_moment_residuals": residuals,
        "kkt_objective": qp.objective(&u),
        "closed_form_objective": qp.objective(&sol.generator),
        "relative_l2_to_closed_form": relative_l2(&u, &sol.generator)?,
    });
    if let (Problem::Scalar(eq), ProblemState::Scalar(st)) = (problem, state) {
        let (c, v) = volterra_scalar(eq, st, eps)?;
        report["volterra_constant"] = json!(c);
        report["volterra_relative_l2_to_closed_form"] = json!(relative_l2(&v, &sol.generator)?);
    }
    println!("relative L2 (KKT vs closed form) {}", report["relative_l2_to_closed_form"]);
    let mut out = Outputs::new(common.format);
    out.table("kkt", export::generator_csv(&u)?.replacen("u_hat", "u0", 1))?;
    out.json("oracle", &report);
    out.finish(common, loaded.inner.h, "oracle", &loaded.config, report)
}

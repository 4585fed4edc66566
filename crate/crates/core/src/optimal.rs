//! Closed-form minimum-energy generators.
//!
//! Scalar equations: with `d² = 1 + Σ d_s²`, `â² = Σ a_k² / d²`,
//! `C(t) = cosh(ât)` and `S(t) = sinh(ât)/â`,
//!
//! ```text
//! û_0 = d⁻² [ Σ_s ((d_s a_0 - a_s) C + (a_s a_0 - d_s â²) S) * φ_s
//!             - Σ_s d_s φ_s + c (C - a_0 S) ]
//! c   = ( -d² x̃(ε) + Σ_s ((a_s S + d_s C) * φ_s)(ε) ) / S(ε)
//! ```
//!
//! Companion systems: `û_0 = κ * (Σ q_k (ε - t)^{k-1} + F)` where `κ` is the
//! inverse Laplace transform of `s^{2n} / (s^{2n} + Σ (-1)^k g_k² s^{2(n-k)})`,
//! `F = -Σ (-1)^k g_k/(k-1)! (t^{k-1} * φ_k)` and `q` solves the moment system.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::admissible::{
    assemble_control, assemble_system_control, feedback_tail, moment_constraints,
    system_feedback_tail, system_moment_constraints, MomentConstraints,
};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::{validate_state, ControlSignal, DelayEquation, InitialState, RetardedSystem, SystemState};
use crate::simulation::free_trajectory;

/// Largest `|rate| · ε` accepted by the hyperbolic kernels.
pub const MAX_HYPERBOLIC_ARG: f64 = 50.0;

/// Below this `|rate · t|` the ratio `sinh(rate t)/rate` uses its Taylor series.
const TAYLOR_SWITCH: f64 = 1e-6;

/// Constant(s) fixed by the moment constraints.
#[derive(Clone, Debug, PartialEq)]
pub enum Constants {
    Scalar(f64),
    System(Vec<f64>),
}

impl Constants {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Constants::Scalar(c) => std::slice::from_ref(c),
            Constants::System(q) => q,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalSolution {
    pub generator: GridFunction,
    pub constants: Constants,
    pub control: ControlSignal,
    /// `‖û_T‖²` on `[0, T]`.
    pub energy: f64,
    /// `∫ k_j û_0 - rhs_j` for each moment constraint.
    pub moment_residuals: Vec<f64>,
}

impl OptimalSolution {
    pub fn horizon(&self) -> f64 {
        self.control.horizon()
    }

    pub fn epsilon(&self) -> f64 {
        self.generator.t_end()
    }

    fn new(
        generator: GridFunction,
        constants: Constants,
        control: ControlSignal,
        constraints: &MomentConstraints,
    ) -> Result<Self> {
        let moment_residuals = constraints.residuals(&generator)?;
        Ok(Self {
            energy: control.energy(),
            generator,
            constants,
            control,
            moment_residuals,
        })
    }
}

/// `cosh(rate t)` and `sinh(rate t)/rate`, accurate as `rate → 0`.
#[derive(Clone, Copy, Debug)]
pub struct Hyperbolic {
    rate: f64,
}

impl Hyperbolic {
    /// Fails when `|rate| · span` exceeds [`MAX_HYPERBOLIC_ARG`].
    pub fn new(rate: f64, span: f64) -> Result<Self> {
        let product = rate.abs() * span;
        if !(product <= MAX_HYPERBOLIC_ARG) {
            return Err(Error::Overflow { product });
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn cosh(&self, t: f64) -> f64 {
        (self.rate * t).cosh()
    }

    pub fn sinhc(&self, t: f64) -> f64 {
        let x = self.rate * t;
        if x.abs() < TAYLOR_SWITCH {
            t * (1.0 + x * x / 6.0)
        } else {
            x.sinh() / self.rate
        }
    }
}

/// `sinh(λ t)/λ` for complex `λ`.
fn complex_sinhc(lambda: Complex64, t: f64) -> Complex64 {
    let x = lambda * t;
    if x.norm() < TAYLOR_SWITCH {
        t * (1.0 + x * x / 6.0)
    } else {
        x.sinh() / lambda
    }
}

/// Shifts `c` by a multiple of `basis` so that the single moment constraint
/// holds exactly on the grid.
fn refine_constant(
    mc: &MomentConstraints,
    u: &mut GridFunction,
    c: &mut f64,
    basis: &GridFunction,
) -> Result<()> {
    let residual = mc.residuals(u)?[0];
    if residual.abs() > 1e-10 * (1.0 + mc.rhs[0].abs()) {
        let slope = mc.kernels[0].dot(basis)?;
        if slope == 0.0 {
            return Err(Error::DegenerateConstant);
        }
        let dc = -residual / slope;
        *u = u.axpy(dc, basis)?;
        *c += dc;
    }
    Ok(())
}

/// Optimal generator and constant for `x'(t) = a1 x(t - 1) + u(t)`.
pub fn simplest_generator(
    a1: f64,
    state: &InitialState,
    epsilon: f64,
) -> Result<(GridFunction, f64)> {
    let eq = DelayEquation::simplest(a1)?;
    eq.check_epsilon(epsilon)?;
    let xt = free_trajectory(&eq, state, epsilon)?;
    let hyp = Hyperbolic::new(a1, epsilon)?;
    let a2 = a1 * a1;
    let weighted = xt.convolve_kernel(|t| hyp.sinhc(t)).last();
    let mut c = -(xt.last() + a2 * weighted) / hyp.sinhc(epsilon);
    let basis = xt.map(|t, _| hyp.cosh(t));
    let mut u = xt
        .convolve_kernel(|t| hyp.cosh(t))
        .scale(a2)
        .axpy(c, &basis)?;
    let mc = moment_constraints(&eq, state, epsilon)?;
    refine_constant(&mc, &mut u, &mut c, &basis)?;
    Ok((u, c))
}

/// Minimum-energy control of `x'(t) = a1 x(t - 1) + u(t)` on `[0, 1 + ε]`.
pub fn optimal_simplest(a1: f64, state: &InitialState, epsilon: f64) -> Result<OptimalSolution> {
    let eq = DelayEquation::simplest(a1)?;
    let (u, c) = simplest_generator(a1, state, epsilon)?;
    let control = assemble_control(&eq, state, &u)?;
    let mc = moment_constraints(&eq, state, epsilon)?;
    OptimalSolution::new(u, Constants::Scalar(c), control, &mc)
}

/// Optimal generator and constant for a scalar equation (retarded or neutral).
pub fn scalar_generator(
    eq: &DelayEquation,
    state: &InitialState,
    epsilon: f64,
) -> Result<(GridFunction, f64)> {
    eq.check_epsilon(epsilon)?;
    validate_state(eq, state)?;
    let xt = free_trajectory(eq, state, epsilon)?;
    let tail = feedback_tail(eq, state, epsilon)?;
    let n = eq.order();
    let a0 = eq.a(0);
    let d2 = 1.0 + (1..=n).map(|s| eq.d(s).powi(2)).sum::<f64>();
    let ahat2 = eq.a_coeffs().iter().map(|a| a * a).sum::<f64>() / d2;
    let hyp = Hyperbolic::new(ahat2.sqrt(), epsilon)?;

    let mut u = xt.scale(0.0);
    let mut weighted = 0.0;
    for s in 1..=n {
        let (as_, ds) = (eq.a(s), eq.d(s));
        let phi = &tail.phi[s - 1];
        let lead = ds * a0 - as_;
        let cross = as_ * a0 - ds * ahat2;
        let conv = phi.convolve_kernel(|t| lead * hyp.cosh(t) + cross * hyp.sinhc(t));
        u = u.add(&conv)?.axpy(-ds, phi)?;
        weighted += phi
            .convolve_kernel(|t| as_ * hyp.sinhc(t) + ds * hyp.cosh(t))
            .last();
    }
    let mut c = (-d2 * xt.last() + weighted) / hyp.sinhc(epsilon);
    let basis = xt.map(|t, _| (hyp.cosh(t) - a0 * hyp.sinhc(t)) / d2);
    u = u.scale(1.0 / d2).axpy(c, &basis)?;
    let mc = moment_constraints(eq, state, epsilon)?;
    refine_constant(&mc, &mut u, &mut c, &basis)?;
    Ok((u, c))
}

fn scalar_solution(eq: &DelayEquation, state: &InitialState, epsilon: f64) -> Result<OptimalSolution> {
    let (u, c) = scalar_generator(eq, state, epsilon)?;
    let control = assemble_control(eq, state, &u)?;
    let mc = moment_constraints(eq, state, epsilon)?;
    OptimalSolution::new(u, Constants::Scalar(c), control, &mc)
}

/// Minimum-energy control of a neutral (or any scalar) equation on `[0, 1 + ε]`.
pub fn optimal_neutral(eq: &DelayEquation, state: &InitialState, epsilon: f64) -> Result<OptimalSolution> {
    scalar_solution(eq, state, epsilon)
}

/// Minimum-energy control of a retarded equation; the neutral formula with
/// every `d_k = 0`.
pub fn optimal_retarded(eq: &DelayEquation, state: &InitialState, epsilon: f64) -> Result<OptimalSolution> {
    if !eq.is_retarded() {
        return Err(Error::NotRetarded);
    }
    scalar_solution(eq, state, epsilon)
}

/// Dispatches to the simplest, retarded or neutral solver.
pub fn optimal_scalar(eq: &DelayEquation, state: &InitialState, epsilon: f64) -> Result<OptimalSolution> {
    if eq.is_simplest() {
        optimal_simplest(eq.a(1), state, epsilon)
    } else if eq.is_retarded() {
        optimal_retarded(eq, state, epsilon)
    } else {
        optimal_neutral(eq, state, epsilon)
    }
}

/// Smooth part `Σ_j Re(β_j sinh(√w_j t)/√w_j)` of the resolvent kernel `κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemKernel {
    /// `(β_j, √w_j)` for each simple root `w_j` of the reduced polynomial.
    pub terms: Vec<(Complex64, Complex64)>,
}

impl SystemKernel {
    /// Partial fractions of
    /// `R(w) = -Σ (-1)^k g_k² w^{n-k} / (w^n + Σ (-1)^k g_k² w^{n-k})` in `w = s²`,
    /// after cancelling the common factor `w^m` from trailing zero `g_k`.
    pub fn new(g: &[f64], epsilon: f64) -> Result<Self> {
        let mut len = g.len();
        while len > 0 && g[len - 1] == 0.0 {
            len -= 1;
        }
        if len == 0 {
            return Ok(Self { terms: Vec::new() });
        }
        // Monic p(w) = w^len + Σ c_k w^{len-k}, c_k = (-1)^k g_k².
        let coeffs: Vec<f64> = (1..=len)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } * g[k - 1] * g[k - 1])
            .collect();
        let mut companion = DMatrix::<f64>::zeros(len, len);
        for (k, &c) in coeffs.iter().enumerate() {
            companion[(0, k)] = -c;
        }
        for i in 1..len {
            companion[(i, i - 1)] = 1.0;
        }
        let roots: Vec<Complex64> = companion.complex_eigenvalues().iter().copied().collect();
        let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
        for i in 0..roots.len() {
            for j in 0..i {
                let gap = (roots[i] - roots[j]).norm();
                if gap < 1e-6 * scale {
                    return Err(Error::MultipleRootUnsupported { gap });
                }
            }
        }
        let eval = |w: Complex64, with_lead: bool| -> Complex64 {
            let mut acc = if with_lead { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            for &c in &coeffs {
                acc = acc * w + c;
            }
            acc
        };
        let deriv = |w: Complex64| -> Complex64 {
            let mut acc = Complex64::new(len as f64, 0.0);
            for (k, &c) in coeffs.iter().enumerate().take(len - 1) {
                acc = acc * w + c * (len - 1 - k) as f64;
            }
            acc
        };
        let mut terms = Vec::with_capacity(len);
        for &w in &roots {
            let numerator = -eval(w, false);
            let beta = numerator / deriv(w);
            let lambda = w.sqrt();
            let product = lambda.norm() * epsilon;
            if product > MAX_HYPERBOLIC_ARG {
                return Err(Error::Overflow { product });
            }
            terms.push((beta, lambda));
        }
        Ok(Self { terms })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(beta, lambda)| (beta * complex_sinhc(lambda, t)).re)
            .sum()
    }

    /// `κ * f = f + (smooth part) * f`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if self.terms.is_empty() {
            return Ok(f.clone());
        }
        f.add(&f.convolve_kernel(|t| self.eval(t)))
    }
}

/// Optimal generator and constants `q_1..q_n` of a companion system.
pub fn system_generator(
    sys: &RetardedSystem,
    state: &SystemState,
    epsilon: f64,
) -> Result<(GridFunction, Vec<f64>)> {
    let g = sys.require_companion()?;
    let n = sys.dim();
    let mc = system_moment_constraints(sys, state, epsilon)?;
    let tail = system_feedback_tail(sys, state, epsilon)?;
    let kernel = SystemKernel::new(g, epsilon)?;

    let mut forcing = tail.phi[0].scale(0.0);
    let mut factorial = 1.0;
    for k in 1..=n {
        if k > 1 {
            factorial *= (k - 1) as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let conv = tail.phi[k - 1].convolve_kernel(|t| t.powi(k as i32 - 1));
        forcing = forcing.axpy(-sign * g[k - 1] / factorial, &conv)?;
    }
    let base = kernel.apply(&forcing)?;
    let basis = (0..n)
        .map(|k| kernel.apply(&mc.kernels[k]))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        for k in 0..n {
            matrix[(j, k)] = mc.kernels[j].dot(&basis[k])?;
        }
        rhs[j] = mc.rhs[j] - mc.kernels[j].dot(&base)?;
    }
    let q = solve_small(&matrix, &rhs).ok_or(Error::DegenerateMomentSystem)?;
    let mut u = base;
    for (k, b) in basis.iter().enumerate() {
        u = u.axpy(q[k], b)?;
    }
    Ok((u, q.iter().copied().collect()))
}

/// LU solve that reports near-singular matrices as failures.
fn solve_small(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    let bottom = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(top > 0.0) || bottom < 1e-14 * top {
        return None;
    }
    m.clone().lu().solve(b)
}

/// Minimum-energy control of a companion system on `[0, n + ε]`.
pub fn optimal_system(sys: &RetardedSystem, state: &SystemState, epsilon: f64) -> Result<OptimalSolution> {
    let (u, q) = system_generator(sys, state, epsilon)?;
    let control = assemble_system_control(sys, state, &u)?;
    let mc = system_moment_constraints(sys, state, epsilon)?;
    OptimalSolution::new(u, Constants::System(q), control, &mc)
}

/// Problem class accepted by [`solve`] and [`energy_curve`].
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Scalar(DelayEquation),
    System(RetardedSystem),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemState {
    Scalar(InitialState),
    System(SystemState),
}

impl ProblemState {
    pub fn step(&self) -> f64 {
        match self {
            ProblemState::Scalar(s) => s.step(),
            ProblemState::System(s) => s.step(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        match self {
            ProblemState::Scalar(s) => ProblemState::Scalar(s.scale(alpha)),
            ProblemState::System(s) => ProblemState::System(s.scale(alpha)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ProblemState::Scalar(s) => s.is_zero(),
            ProblemState::System(s) => s.is_zero(),
        }
    }
}

impl Problem {
    /// `T - 1 + ε` where the horizon is `1 + ε` or `n + ε`.
    pub fn horizon(&self, epsilon: f64) -> f64 {
        match self {
            Problem::Scalar(_) => 1.0 + epsilon,
            Problem::System(sys) => sys.dim() as f64 + epsilon,
        }
    }
}

fn mismatch() -> Error {
    Error::InvalidState("state does not match the problem class".into())
}

pub fn solve(problem: &Problem, state: &ProblemState, epsilon: f64) -> Result<OptimalSolution> {
    match (problem, state) {
        (Problem::Scalar(eq), ProblemState::Scalar(st)) => optimal_scalar(eq, st, epsilon),
        (Problem::System(sys), ProblemState::System(st)) => optimal_system(sys, st, epsilon),
        _ => Err(mismatch()),
    }
}

/// Moment constraints of either problem class.
pub fn constraints(problem: &Problem, state: &ProblemState, epsilon: f64) -> Result<MomentConstraints> {
    match (problem, state) {
        (Problem::Scalar(eq), ProblemState::Scalar(st)) => moment_constraints(eq, st, epsilon),
        (Problem::System(sys), ProblemState::System(st)) => {
            system_moment_constraints(sys, st, epsilon)
        }
        _ => Err(mismatch()),
    }
}

/// Admissible control generated by an arbitrary feasible `u0`.
pub fn admissible_control(
    problem: &Problem,
    state: &ProblemState,
    u0: &GridFunction,
) -> Result<ControlSignal> {
    match (problem, state) {
        (Problem::Scalar(eq), ProblemState::Scalar(st)) => assemble_control(eq, st, u0),
        (Problem::System(sys), ProblemState::System(st)) => assemble_system_control(sys, st, u0),
        _ => Err(mismatch()),
    }
}

/// Minimum energy for each `ε` in `epsilons`.
pub fn energy_curve(
    problem: &Problem,
    state: &ProblemState,
    epsilons: &[f64],
) -> Result<Vec<(f64, f64)>> {
    epsilons
        .iter()
        .map(|&eps| Ok((eps, solve(problem, state, eps)?.energy)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{null_residual, simulate, simulate_system, system_null_residual};

    const H: f64 = 1e-3;

    fn worked_state(h: f64) -> InitialState {
        InitialState::from_fns(1.0, h, |_| 0.0, None).unwrap()
    }

    #[test]
    fn hyperbolic_limits() {
        let z = Hyperbolic::new(0.0, 1.0).unwrap();
        assert_eq!(z.sinhc(0.3), 0.3);
        assert_eq!(z.cosh(0.3), 1.0);
        let small = Hyperbolic::new(1e-9, 1.0).unwrap();
        assert!((small.sinhc(0.5) - 0.5).abs() < 1e-15);
        let one = Hyperbolic::new(1.0, 1.0).unwrap();
        assert!((one.sinhc(0.5) - 0.5f64.sinh()).abs() < 1e-15);
        assert!(matches!(Hyperbolic::new(200.0, 0.5), Err(Error::Overflow { .. })));
    }

    #[test]
    fn zero_state_has_zero_control() {
        let st = InitialState::from_fns(0.0, H, |_| 0.0, None).unwrap();
        let sol = optimal_simplest(1.0, &st, 0.5).unwrap();
        assert_eq!(sol.generator.sup_norm(), 0.0);
        assert_eq!(sol.energy, 0.0);
        assert_eq!(sol.constants, Constants::Scalar(0.0));
    }

    #[test]
    fn worked_example_matches_hand_formula() {
        let sol = optimal_simplest(1.0, &worked_state(H), 0.5).unwrap();
        let coth = 1.0 / 0.5f64.tanh();
        let Constants::Scalar(c) = sol.constants else { panic!() };
        assert!((c + coth).abs() < 1e-6, "c = {c}");
        assert!((c + 2.16395).abs() < 1e-5);
        let err = sol
            .generator
            .nodes()
            .zip(sol.generator.samples())
            .map(|(t, v)| (v - (t.sinh() - coth * t.cosh())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "err = {err}");
        assert!((sol.generator.integrate() + 1.0).abs() < 1e-8);
        assert!(sol.moment_residuals[0].abs() < 1e-8);
    }

    #[test]
    fn vanishing_coefficient_uses_the_limit() {
        let st = InitialState::from_fns(1.0, H, |t: f64| t, None).unwrap();
        let (u, _) = simplest_generator(1e-9, &st, 0.5).unwrap();
        // x̃ → 1 as a_1 → 0, so the optimum tends to the constant -1/ε.
        assert!(u.samples().iter().all(|&v| (v + 2.0).abs() < 1e-8));
    }

    #[test]
    fn general_formula_reduces_to_the_simplest_case() {
        let st = InitialState::from_fns(0.4, H, |t: f64| (3.0 * t).cos(), None).unwrap();
        for a1 in [1.0, -1.7, 0.3] {
            let eq = DelayEquation::new(vec![0.0, 1.0], vec![0.0, a1], vec![0.0]).unwrap();
            let (u, c) = scalar_generator(&eq, &st, 0.4).unwrap();
            let (v, c2) = simplest_generator(a1, &st, 0.4).unwrap();
            assert!(u.sub(&v).unwrap().sup_norm() <= 1e-10 * (1.0 + v.sup_norm()));
            assert!((c - c2).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn retarded_and_neutral_solvers_agree_when_d_vanishes() {
        let st = InitialState::from_fns(1.0, H, |t: f64| 1.0 + t, Some(&mut |_| 1.0)).unwrap();
        let eq = DelayEquation::retarded(vec![0.0, 0.5, 1.0], vec![0.2, 1.0, 1.0]).unwrap();
        let a = optimal_retarded(&eq, &st, 0.25).unwrap();
        let b = optimal_neutral(&eq.with_zero_d(), &st, 0.25).unwrap();
        assert!(a.generator.sub(&b.generator).unwrap().sup_norm() <= 1e-12);
        let neutral = DelayEquation::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.5]).unwrap();
        assert_eq!(optimal_retarded(&neutral, &st, 0.3), Err(Error::NotRetarded));
    }

    #[test]
    fn neutral_example_reaches_zero() {
        let eq = DelayEquation::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.5]).unwrap();
        let st = InitialState::from_fns(1.0, H, |t: f64| 1.0 + t, Some(&mut |_| 1.0)).unwrap();
        let sol = optimal_neutral(&eq, &st, 0.3).unwrap();
        assert!(sol.moment_residuals[0].abs() <= 1e-8);
        let tr = simulate(&eq, &st, &sol.control, 1.3).unwrap();
        let res = null_residual(&tr, 1.3).unwrap();
        assert!(res <= 1e-4, "residual {res}");
    }

    #[test]
    fn generator_is_linear_in_the_state() {
        let eq = DelayEquation::new(vec![0.0, 0.5, 1.0], vec![0.3, -1.0, 0.8], vec![0.2, 0.4])
            .unwrap();
        let st = InitialState::from_fns(
            1.0,
            H,
            |t: f64| (2.0 * t).cos(),
            Some(&mut |t: f64| -2.0 * (2.0 * t).sin()),
        )
        .unwrap();
        let (u, _) = scalar_generator(&eq, &st, 0.2).unwrap();
        let (v, _) = scalar_generator(&eq, &st.scale(-2.5), 0.2).unwrap();
        assert!(v.sub(&u.scale(-2.5)).unwrap().sup_norm() <= 1e-10 * u.sup_norm());
    }

    #[test]
    fn energy_decreases_with_epsilon() {
        let problem = Problem::Scalar(DelayEquation::simplest(1.0).unwrap());
        let st = ProblemState::Scalar(worked_state(H));
        let curve = energy_curve(&problem, &st, &[0.1, 0.25, 0.5]).unwrap();
        assert!(curve[0].1 > curve[1].1 && curve[1].1 > curve[2].1);
        let zero = ProblemState::Scalar(InitialState::zero(H).unwrap());
        assert!(energy_curve(&problem, &zero, &[0.1, 0.5])
            .unwrap()
            .iter()
            .all(|&(_, e)| e == 0.0));
    }

    #[test]
    fn one_dimensional_kernel_is_hyperbolic_sine() {
        let k = SystemKernel::new(&[1.5], 0.5).unwrap();
        for t in [0.0, 0.1, 0.5] {
            assert!((k.eval(t) - 1.5 * (1.5 * t).sinh()).abs() < 1e-12);
        }
        assert!(SystemKernel::new(&[0.0, 0.0], 0.5).unwrap().terms.is_empty());
    }

    #[test]
    fn one_dimensional_system_matches_scalar_solution() {
        let st = InitialState::from_fns(0.7, 2.5e-4, |t: f64| t.sin(), None).unwrap();
        let sst = crate::simulation::system_state_from_scalar(&st).unwrap();
        for g1 in [-1.0, 0.8] {
            let sys = RetardedSystem::companion(&[g1]).unwrap();
            let (u, q) = system_generator(&sys, &sst, 0.5).unwrap();
            let (v, c) = simplest_generator(-g1, &st, 0.5).unwrap();
            let diff = u.sub(&v).unwrap().sup_norm();
            assert!(diff <= 1e-8, "g1 = {g1}: {diff}");
            assert!((q[0] - c).abs() <= 1e-8);
        }
    }

    #[test]
    fn two_dimensional_system_reaches_zero() {
        let sys = RetardedSystem::companion(&[1.0, 1.0]).unwrap();
        let x0 = vec![
            GridFunction::from_fn_with_step(-1.0, 0.0, H, |t: f64| (2.0 * t).sin()).unwrap(),
            GridFunction::from_fn_with_step(-1.0, 0.0, H, |t: f64| 0.5 - t).unwrap(),
        ];
        let st = SystemState::new(vec![1.0, -0.5], x0).unwrap();
        let sol = optimal_system(&sys, &st, 0.4).unwrap();
        assert!(sol.moment_residuals.iter().all(|r| r.abs() <= 1e-8));
        let tr = simulate_system(&sys, &st, &sol.control, 2.4).unwrap();
        let res = system_null_residual(&tr, 2.4).unwrap();
        assert!(res <= 1e-4, "residual {res}");
        let zero = optimal_system(&sys, &SystemState::zero(2, H).unwrap(), 0.4).unwrap();
        assert_eq!(zero.generator.sup_norm(), 0.0);
        assert_eq!(zero.constants, Constants::System(vec![0.0, 0.0]));
    }
}

//! Brute-force solvers used to cross-check the closed forms.
//!
//! [`kkt_solve`] minimizes the discretized energy
//! `Φ(u) = ‖u‖²_w + Σ_s ‖φ_s + K_s u‖²_w` subject to the moment constraints
//! through the saddle-point system `[H Cᵀ; C 0][u; λ] = [-g; c]`.
//! [`volterra_solve`] handles second-kind equations `u - k * u = f + c`.

use nalgebra::{DMatrix, DVector};

use crate::admissible::{
    feedback_tail, moment_constraints, system_feedback_tail, system_moment_constraints,
    MomentConstraints,
};
use crate::error::{Error, Result};
use crate::grid::{trapezoid_weights, GridFunction};
use crate::model::{validate_state, DelayEquation, InitialState, RetardedSystem, SystemState};
use crate::optimal::{Problem, ProblemState};

/// Affine map `u ↦ offset + matrix · u` on grid samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineOperator {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineOperator {
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.matrix * u
    }
}

/// Discretized minimum-energy problem on `[0, ε]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    pub weights: Vec<f64>,
    pub operators: Vec<AffineOperator>,
    pub constraints: MomentConstraints,
}

/// Matrix of the trapezoid convolution `u ↦ k * u` with `k` sampled at the
/// lags `0, h, 2h, …`.
pub fn convolution_matrix(kernel: &[f64], h: f64) -> DMatrix<f64> {
    let n = kernel.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == 0 || j > i {
            0.0
        } else if j == 0 || j == i {
            0.5 * h * kernel[i - j]
        } else {
            h * kernel[i - j]
        }
    })
}

impl QuadraticProgram {
    /// Only the `‖u‖²` term; useful for pure moment problems.
    pub fn pure(constraints: MomentConstraints) -> Self {
        let weights = trapezoid_weights(constraints.grid_steps(), constraints.kernels[0].step());
        Self {
            weights,
            operators: Vec::new(),
            constraints,
        }
    }

    /// Scalar equation: `K_s = d_s I + (d_s a_0 - a_s) E` with `E` the
    /// convolution by `e^{a_0 t}`.
    pub fn scalar(eq: &DelayEquation, state: &InitialState, epsilon: f64) -> Result<Self> {
        eq.check_epsilon(epsilon)?;
        validate_state(eq, state)?;
        let constraints = moment_constraints(eq, state, epsilon)?;
        let tail = feedback_tail(eq, state, epsilon)?;
        let phi0 = &tail.phi[0];
        let h = phi0.step();
        let a0 = eq.a(0);
        let kernel: Vec<f64> = phi0.nodes().map(|t| (t * a0).exp()).collect();
        let conv = convolution_matrix(&kernel, h);
        let operators = (1..=eq.order())
            .map(|s| {
                let ds = eq.d(s);
                let lead = ds * a0 - eq.a(s);
                let mut matrix = &conv * lead;
                for i in 0..matrix.nrows() {
                    matrix[(i, i)] += ds;
                }
                AffineOperator {
                    matrix,
                    offset: DVector::from_column_slice(tail.phi[s - 1].samples()),
                }
            })
            .collect();
        Ok(Self {
            weights: phi0.weights(),
            operators,
            constraints,
        })
    }

    /// Companion system: `K_k = g_k/(k-1)! · (t^{k-1} *)`.
    pub fn system(sys: &RetardedSystem, state: &SystemState, epsilon: f64) -> Result<Self> {
        let g = sys.require_companion()?;
        let constraints = system_moment_constraints(sys, state, epsilon)?;
        let tail = system_feedback_tail(sys, state, epsilon)?;
        let phi0 = &tail.phi[0];
        let h = phi0.step();
        let mut factorial = 1.0;
        let mut operators = Vec::with_capacity(sys.dim());
        for k in 1..=sys.dim() {
            if k > 1 {
                factorial *= (k - 1) as f64;
            }
            let kernel: Vec<f64> = phi0.nodes().map(|t| t.powi(k as i32 - 1)).collect();
            operators.push(AffineOperator {
                matrix: convolution_matrix(&kernel, h) * (g[k - 1] / factorial),
                offset: DVector::from_column_slice(tail.phi[k - 1].samples()),
            });
        }
        Ok(Self {
            weights: phi0.weights(),
            operators,
            constraints,
        })
    }

    pub fn for_problem(problem: &Problem, state: &ProblemState, epsilon: f64) -> Result<Self> {
        match (problem, state) {
            (Problem::Scalar(eq), ProblemState::Scalar(st)) => Self::scalar(eq, st, epsilon),
            (Problem::System(sys), ProblemState::System(st)) => Self::system(sys, st, epsilon),
            _ => Err(Error::InvalidState("state does not match the problem class".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `Φ(u)` with the trapezoid weights.
    pub fn objective(&self, u: &GridFunction) -> f64 {
        let v = DVector::from_column_slice(u.samples());
        let weighted = |x: &DVector<f64>| -> f64 {
            x.iter().zip(&self.weights).map(|(xi, w)| w * xi * xi).sum()
        };
        weighted(&v) + self.operators.iter().map(|op| weighted(&op.apply(&v))).sum::<f64>()
    }

    /// Hessian `H = W + Σ K_sᵀ W K_s` and gradient offset `g = Σ K_sᵀ W φ_s`.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let w = DVector::from_column_slice(&self.weights);
        let mut hess = DMatrix::from_diagonal(&w);
        let mut grad = DVector::zeros(n);
        for op in &self.operators {
            let mut wk = op.matrix.clone();
            for (i, mut row) in wk.row_iter_mut().enumerate() {
                row *= w[i];
            }
            hess.gemm_tr(1.0, &op.matrix, &wk, 1.0);
            grad += wk.tr_mul(&op.offset);
        }
        (hess, grad)
    }

    fn constraint_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.constraints.len();
        let rows = DMatrix::from_fn(m, self.dim(), |j, i| {
            self.weights[i] * self.constraints.kernels[j].samples()[i]
        });
        (rows, DVector::from_column_slice(&self.constraints.rhs))
    }
}

/// Unique minimizer of the quadratic program.
pub fn kkt_solve(qp: &QuadraticProgram) -> Result<GridFunction> {
    let template = &qp.constraints.kernels[0];
    if qp.dim() != template.len() {
        return Err(Error::GridMismatch("program and constraints differ in size".into()));
    }
    let (hess, grad) = qp.normal_equations();
    let (rows, rhs) = qp.constraint_rows();
    let u = schur_solve(&hess, &grad, &rows, &rhs).or_else(|| full_solve(&hess, &grad, &rows, &rhs));
    let u = u.ok_or_else(|| Error::SingularSystem("saddle-point system is singular".into()))?;
    GridFunction::from_samples(template.t_start(), template.t_end(), u.iter().copied().collect())
}

fn schur_solve(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<DVector<f64>> {
    let chol = hess.clone().cholesky()?;
    let hinv_g = chol.solve(grad);
    let hinv_ct = chol.solve(&rows.transpose());
    let schur = rows * &hinv_ct;
    let schur_chol = schur.clone().cholesky()?;
    let diag_max = schur.diagonal().amax();
    let diag_min = schur_chol.l().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if !(diag_min > 1e-14 * diag_max) {
        return None;
    }
    let lambda = schur_chol.solve(&(-(rows * &hinv_g) - rhs));
    let u = -hinv_g - hinv_ct * lambda;
    u.iter().all(|v| v.is_finite()).then_some(u)
}

fn full_solve(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let m = rows.nrows();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(hess);
    kkt.view_mut((0, n), (n, m)).copy_from(&rows.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(rows);
    let mut b = DVector::zeros(n + m);
    b.rows_mut(0, n).copy_from(&(-grad));
    b.rows_mut(n, m).copy_from(rhs);
    let sol = kkt.lu().solve(&b)?;
    let u = sol.rows(0, n).into_owned();
    u.iter().all(|v| v.is_finite()).then_some(u)
}

/// Solves `u - k * u = rhs + c` by forward substitution on the trapezoid rule.
pub fn volterra_solve(kernel: &GridFunction, rhs: &GridFunction, c: f64) -> Result<GridFunction> {
    let ones = rhs.map(|_, _| 1.0);
    volterra_solve_forced(kernel, rhs, c, &ones)
}

/// Solves `u - k * u = rhs + c · forcing`.
pub fn volterra_solve_forced(
    kernel: &GridFunction,
    rhs: &GridFunction,
    c: f64,
    forcing: &GridFunction,
) -> Result<GridFunction> {
    kernel.check_same_grid(rhs)?;
    rhs.check_same_grid(forcing)?;
    let h = rhs.step();
    let k = kernel.samples();
    let f: Vec<f64> = rhs
        .samples()
        .iter()
        .zip(forcing.samples())
        .map(|(r, p)| r + c * p)
        .collect();
    let denom = 1.0 - 0.5 * h * k[0];
    if denom.abs() < 1e-12 {
        return Err(Error::SingularSystem("step too large for the kernel".into()));
    }
    let mut u = vec![0.0; f.len()];
    u[0] = f[0];
    for i in 1..f.len() {
        let mut acc = 0.5 * k[i] * u[0];
        for j in 1..i {
            acc += k[i - j] * u[j];
        }
        u[i] = (f[i] + h * acc) / denom;
    }
    GridFunction::from_samples(rhs.t_start(), rhs.t_end(), u)
}

/// Finds `c` so that `family(c)` meets a single moment constraint, assuming
/// the solution depends affinely on `c`.
pub fn constant_search(
    family: impl Fn(f64) -> Result<GridFunction>,
    constraints: &MomentConstraints,
) -> Result<(f64, GridFunction)> {
    if constraints.len() != 1 {
        return Err(Error::InvalidState("constant search needs exactly one constraint".into()));
    }
    let u0 = family(0.0)?;
    let r0 = constraints.residuals(&u0)?[0];
    if r0 == 0.0 {
        return Ok((0.0, u0));
    }
    let r1 = constraints.residuals(&family(1.0)?)?[0];
    let slope = r1 - r0;
    if !(slope.abs() > 1e-14 * (1.0 + r0.abs())) {
        return Err(Error::DegenerateConstant);
    }
    let c = -r0 / slope;
    Ok((c, family(c)?))
}

/// Second-kind equation satisfied by the optimal generator of a scalar
/// equation: `u - S·sinhc(a_0) * u = f + c e^{-a_0 t}` with
/// `S = Σ (a_s² - d_s² a_0²)/d²` and
/// `f = (Σ (d_s a_0 - a_s)(e^{-a_0 ·} * φ_s) - Σ d_s φ_s)/d²`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolterraFamily {
    pub kernel: GridFunction,
    pub rhs: GridFunction,
    pub forcing: GridFunction,
}

impl VolterraFamily {
    pub fn scalar(eq: &DelayEquation, state: &InitialState, epsilon: f64) -> Result<Self> {
        eq.check_epsilon(epsilon)?;
        validate_state(eq, state)?;
        let tail = feedback_tail(eq, state, epsilon)?;
        let a0 = eq.a(0);
        let n = eq.order();
        let d2 = 1.0 + (1..=n).map(|s| eq.d(s).powi(2)).sum::<f64>();
        let strength = (1..=n)
            .map(|s| eq.a(s).powi(2) - (eq.d(s) * a0).powi(2))
            .sum::<f64>()
            / d2;
        let template = &tail.phi[0];
        let sinhc = |t: f64| {
            if (a0 * t).abs() < 1e-6 {
                t * (1.0 + (a0 * t).powi(2) / 6.0)
            } else {
                (a0 * t).sinh() / a0
            }
        };
        let kernel = template.map(|t, _| strength * sinhc(t));
        let mut rhs = template.map(|_, _| 0.0);
        for s in 1..=n {
            let phi = &tail.phi[s - 1];
            let conv = phi.convolve_kernel(|t| (-a0 * t).exp());
            rhs = rhs.axpy(eq.d(s) * a0 - eq.a(s), &conv)?.axpy(-eq.d(s), phi)?;
        }
        Ok(Self {
            kernel,
            rhs: rhs.scale(1.0 / d2),
            forcing: template.map(|t, _| (-a0 * t).exp()),
        })
    }

    pub fn solve(&self, c: f64) -> Result<GridFunction> {
        volterra_solve_forced(&self.kernel, &self.rhs, c, &self.forcing)
    }
}

/// Optimal generator of a scalar equation through the Volterra route.
pub fn volterra_scalar(
    eq: &DelayEquation,
    state: &InitialState,
    epsilon: f64,
) -> Result<(f64, GridFunction)> {
    let family = VolterraFamily::scalar(eq, state, epsilon)?;
    let constraints = moment_constraints(eq, state, epsilon)?;
    constant_search(|c| family.solve(c), &constraints)
}

/// `‖a - b‖ / ‖b‖` in `L²`, or `‖a - b‖` when `b` vanishes.
pub fn relative_l2(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    let diff = a.sub(b)?.norm_l2();
    let scale = b.norm_l2();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimal::{optimal_system, scalar_generator, simplest_generator};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked(h: f64) -> (DelayEquation, InitialState) {
        (
            DelayEquation::simplest(1.0).unwrap(),
            InitialState::from_fns(1.0, h, |_| 0.0, None).unwrap(),
        )
    }

    #[test]
    fn zero_problem_has_zero_minimizer() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let st = InitialState::zero(1e-2).unwrap();
        let qp = QuadraticProgram::scalar(&eq, &st, 0.5).unwrap();
        assert_eq!(kkt_solve(&qp).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn pure_moment_problem_gives_constant() {
        let kernel = GridFunction::from_fn(0.0, 0.5, 500, |_| 1.0).unwrap();
        let mc = MomentConstraints {
            kernels: vec![kernel],
            rhs: vec![-1.0],
        };
        let u = kkt_solve(&QuadraticProgram::pure(mc)).unwrap();
        assert!(u.samples().iter().all(|v| (v + 2.0).abs() < 1e-10));
    }

    #[test]
    fn dependent_constraints_are_singular() {
        let kernel = GridFunction::from_fn(0.0, 0.5, 50, |_| 1.0).unwrap();
        let mc = MomentConstraints {
            kernels: vec![kernel.clone(), kernel],
            rhs: vec![-1.0, 0.0],
        };
        assert!(matches!(
            kkt_solve(&QuadraticProgram::pure(mc)),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn kkt_matches_worked_example() {
        let (eq, st) = worked(2.5e-4);
        let u = kkt_solve(&QuadraticProgram::scalar(&eq, &st, 0.5).unwrap()).unwrap();
        let coth = 1.0 / 0.5f64.tanh();
        let exact = u.map(|t, _| t.sinh() - coth * t.cosh());
        assert!(relative_l2(&u, &exact).unwrap() <= 1e-3);
    }

    #[test]
    fn kkt_minimizer_beats_feasible_perturbations() {
        let eq = DelayEquation::new(vec![0.0, 0.5, 1.0], vec![0.3, 1.0, -0.5], vec![0.2, 0.4])
            .unwrap();
        let st = InitialState::from_fns(1.0, 5e-3, |t: f64| 1.0 + t, Some(&mut |_| 1.0)).unwrap();
        let qp = QuadraticProgram::scalar(&eq, &st, 0.2).unwrap();
        let u = kkt_solve(&qp).unwrap();
        assert!(qp.constraints.max_residual(&u).unwrap() <= 1e-10);
        let base = qp.objective(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let raw = u.map(|_, _| rng.random_range(-1.0..1.0));
            let zero_rhs = MomentConstraints {
                kernels: qp.constraints.kernels.clone(),
                rhs: vec![0.0],
            };
            let delta = zero_rhs.project(&raw).unwrap();
            let value = qp.objective(&u.add(&delta).unwrap());
            assert!(value > base);
        }
    }

    #[test]
    fn volterra_identity_kernel() {
        let zero = GridFunction::from_fn(0.0, 1.0, 100, |_| 0.0).unwrap();
        let rhs = GridFunction::from_fn(0.0, 1.0, 100, |t: f64| t * t).unwrap();
        let u = volterra_solve(&zero, &rhs, 0.5).unwrap();
        for (t, v) in u.nodes().zip(u.samples()) {
            assert_eq!(*v, t * t + 0.5);
        }
    }

    #[test]
    fn volterra_linear_kernel_resolves_to_cosh() {
        let k = GridFunction::from_fn(0.0, 1.0, 1000, |t: f64| t).unwrap();
        let rhs = k.map(|_, _| 0.0);
        let u = volterra_solve(&k, &rhs, 1.0).unwrap();
        let err = u
            .nodes()
            .zip(u.samples())
            .map(|(t, v)| (v - t.cosh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn volterra_reproduces_simplest_generator() {
        let k = GridFunction::from_fn(0.0, 0.5, 500, |t: f64| t).unwrap();
        let coth = 1.0 / 0.5f64.tanh();
        let u = volterra_solve(&k, &k, -coth).unwrap();
        let err = u
            .nodes()
            .zip(u.samples())
            .map(|(t, v)| (v - (t.sinh() - coth * t.cosh())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4);
    }

    #[test]
    fn constant_search_on_worked_example() {
        let (eq, st) = worked(1e-3);
        let (c, u) = volterra_scalar(&eq, &st, 0.5).unwrap();
        assert!((c + 1.0 / 0.5f64.tanh()).abs() < 1e-6, "c = {c}");
        assert!((u.integrate() + 1.0).abs() < 1e-10);
        let zero = InitialState::zero(1e-3).unwrap();
        let (c0, u0) = volterra_scalar(&eq, &zero, 0.5).unwrap();
        assert_eq!(c0, 0.0);
        assert_eq!(u0.sup_norm(), 0.0);
    }

    #[test]
    fn insensitive_family_is_degenerate() {
        let (eq, st) = worked(1e-2);
        let mc = moment_constraints(&eq, &st, 0.5).unwrap();
        let fixed = mc.kernels[0].map(|_, _| 1.0);
        assert_eq!(
            constant_search(|_| Ok(fixed.clone()), &mc),
            Err(Error::DegenerateConstant)
        );
    }

    #[test]
    fn volterra_agrees_with_closed_form_for_neutral() {
        let eq = DelayEquation::new(vec![0.0, 0.5, 1.0], vec![0.4, -1.0, 0.7], vec![0.3, 0.5])
            .unwrap();
        let st = InitialState::from_fns(
            1.0,
            1e-3,
            |t: f64| t.cos(),
            Some(&mut |t: f64| -t.sin()),
        )
        .unwrap();
        let (_, v) = volterra_scalar(&eq, &st, 0.25).unwrap();
        let (u, _) = scalar_generator(&eq, &st, 0.25).unwrap();
        assert!(relative_l2(&v, &u).unwrap() <= 1e-3);
        let (s, _) = simplest_generator(1.3, &st, 0.25).unwrap();
        let (_, vs) =
            volterra_scalar(&DelayEquation::simplest(1.3).unwrap(), &st, 0.25).unwrap();
        assert!(relative_l2(&vs, &s).unwrap() <= 1e-3);
    }

    #[test]
    fn kkt_agrees_with_system_closed_form() {
        let sys = RetardedSystem::companion(&[0.7, -0.4]).unwrap();
        let h = 1e-3;
        let x0 = vec![
            GridFunction::from_fn_with_step(-1.0, 0.0, h, |t: f64| t.sin()).unwrap(),
            GridFunction::from_fn_with_step(-1.0, 0.0, h, |_| 0.3).unwrap(),
        ];
        let st = SystemState::new(vec![1.0, -1.0], x0).unwrap();
        let sol = optimal_system(&sys, &st, 0.2).unwrap();
        let u = kkt_solve(&QuadraticProgram::system(&sys, &st, 0.2).unwrap()).unwrap();
        assert!(relative_l2(&u, &sol.generator).unwrap() <= 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn volterra_reproduces_known_solution(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            // u = e^{bt} solves u - a * u = e^{bt} - a (e^{bt} - 1)/b with k ≡ a.
            let k = GridFunction::from_fn(0.0, 0.5, 2000, |_| a).unwrap();
            let rhs = k.map(|t, _| {
                let integral = if b.abs() < 1e-12 { t } else { ((b * t).exp() - 1.0) / b };
                (b * t).exp() - a * integral
            });
            let u = volterra_solve(&k, &rhs, 0.0).unwrap();
            let err = u.nodes().zip(u.samples()).map(|(t, v)| (v - (b * t).exp()).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-5);
        }
    }
}

//! Admissible controls built from a generator `u_0` on `[0, ε]`.
//!
//! For a scalar equation with `0 < ε < min_k (r_k - r_{k-1})` a control
//! `u` on `[0, 1 + ε]` steers the state to zero on `[ε, 1 + ε]` exactly when
//! `u = u_0` on `[0, ε)` with `∫_0^ε e^{a_0(ε-τ)} u_0 = -x̃(ε)`, and the rest
//! of `u` is fixed by the equation:
//!
//! - on `[r_{s-1} + ε, r_s)`: `ψ_s`, which depends on the history only;
//! - on `[r_s, r_s + ε)`: `φ_s(σ) + d_s u_0(σ) + (d_s a_0 - a_s)(e^{a_0 ·} * u_0)(σ)`
//!   with `σ = t - r_s`.
//!
//! Companion systems work the same way with the feedback
//! `u(t) = Σ g_k x_k(t - 1)` after `ε` and one moment per component.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{steps_between, GridFunction, NODE_TOL};
use crate::model::{
    validate_state, ControlSignal, DelayEquation, InitialState, RetardedSystem, Segment,
    SegmentLabel, SystemState,
};
use crate::simulation::{delay_steps, free_trajectory, simulate_closed_loop, SystemTrajectory};

/// Default absolute tolerance on each moment constraint.
pub const MOMENT_TOL: f64 = 1e-8;

/// Linear constraints `∫_0^ε k_j(τ) u_0(τ) dτ = rhs_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentConstraints {
    pub kernels: Vec<GridFunction>,
    pub rhs: Vec<f64>,
}

impl MomentConstraints {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.kernels[0].t_end()
    }

    /// Grid shared by the kernels and every admissible generator.
    pub fn grid_steps(&self) -> usize {
        self.kernels[0].steps()
    }

    /// `∫ k_j u_0 - rhs_j` for every constraint.
    pub fn residuals(&self, u0: &GridFunction) -> Result<Vec<f64>> {
        self.kernels
            .iter()
            .zip(&self.rhs)
            .map(|(k, r)| Ok(k.dot(u0)? - r))
            .collect()
    }

    pub fn max_residual(&self, u0: &GridFunction) -> Result<f64> {
        Ok(self
            .residuals(u0)?
            .into_iter()
            .fold(0.0, |acc, r| acc.max(r.abs())))
    }

    pub fn check(&self, u0: &GridFunction, tolerance: f64) -> Result<()> {
        for (index, residual) in self.residuals(u0)?.into_iter().enumerate() {
            if residual.abs() > tolerance || !residual.is_finite() {
                return Err(Error::MomentViolation {
                    index,
                    residual,
                    tolerance,
                });
            }
        }
        Ok(())
    }

    /// Gram matrix `∫ k_i k_j`.
    pub fn gram(&self) -> Result<DMatrix<f64>> {
        let m = self.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.kernels[i].dot(&self.kernels[j])?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// Orthogonal projection of `u0` onto the constraint set in the
    /// quadrature-weighted L² product: `u0 - Σ λ_j k_j` with `G λ = K u0 - rhs`.
    pub fn project(&self, u0: &GridFunction) -> Result<GridFunction> {
        let r = DVector::from_vec(self.residuals(u0)?);
        let lambda = self
            .gram()?
            .lu()
            .solve(&r)
            .ok_or(Error::DegenerateMomentSystem)?;
        let mut out = u0.clone();
        for (k, l) in self.kernels.iter().zip(lambda.iter()) {
            out = out.axpy(-l, k)?;
        }
        Ok(out)
    }
}

/// Moment constraint of a scalar equation: kernel `e^{a_0(ε-τ)}` and
/// right-hand side `-x̃(ε)`.
pub fn moment_constraints(
    eq: &DelayEquation,
    state: &InitialState,
    epsilon: f64,
) -> Result<MomentConstraints> {
    eq.check_epsilon(epsilon)?;
    let xt = free_trajectory(eq, state, epsilon)?;
    let a0 = eq.a(0);
    let kernel = xt.map(|t, _| (a0 * (epsilon - t)).exp());
    Ok(MomentConstraints {
        kernels: vec![kernel],
        rhs: vec![-xt.last()],
    })
}

/// The parts of an admissible control fixed by the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackTail {
    /// `ψ_s` on `[r_{s-1} + ε, r_s]` in absolute time, `s = 1..N`
    /// (for systems: `[s - 1 + ε, s]`).
    pub psi: Vec<GridFunction>,
    /// `φ_s(σ)` for `σ ∈ [0, ε]`.
    pub phi: Vec<GridFunction>,
}

/// `ψ_s` and `φ_s` of a scalar equation.
pub fn feedback_tail(
    eq: &DelayEquation,
    state: &InitialState,
    epsilon: f64,
) -> Result<FeedbackTail> {
    eq.check_epsilon(epsilon)?;
    let xt = free_trajectory(eq, state, epsilon)?;
    let h = state.step();
    let m = state.steps_per_unit();
    let lags = delay_steps(eq, h)?;
    let m_eps = steps_between(0.0, epsilon, h, "epsilon")?;
    let n = eq.order();
    let x0 = state.x0.samples();
    let dx0 = state.x0_deriv.as_ref().map(|d| d.samples());
    // d_k x0'(·) - a_k x0(·) at history index `idx`.
    let term = |k: usize, idx: usize| -> f64 {
        let d = eq.d(k);
        let mut v = -eq.a(k) * x0[idx];
        if d != 0.0 {
            v += d * dx0.expect("validated state carries x0'")[idx];
        }
        v
    };
    let a0 = eq.a(0);

    let mut psi = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for s in 1..=n {
        let start = lags[s - 1] + m_eps;
        let end = lags[s];
        debug_assert!(end > start);
        let samples = (start..=end)
            .map(|p| (s..=n).map(|k| term(k, m + p - lags[k])).sum())
            .collect();
        psi.push(GridFunction::from_samples(
            start as f64 * h,
            end as f64 * h,
            samples,
        )?);

        let ds = eq.d(s);
        let lead = ds * a0 - eq.a(s);
        let samples = (0..=m_eps)
            .map(|j| {
                let later: f64 = (s + 1..=n)
                    .map(|k| term(k, m + j + lags[s] - lags[k]))
                    .sum();
                let all: f64 = if ds != 0.0 {
                    (1..=n).map(|k| term(k, m + j - lags[k])).sum()
                } else {
                    0.0
                };
                lead * xt.samples()[j] + later - ds * all
            })
            .collect();
        phi.push(GridFunction::from_samples(0.0, epsilon, samples)?);
    }
    Ok(FeedbackTail { psi, phi })
}

fn check_generator_grid(u0: &GridFunction, h: f64) -> Result<f64> {
    if u0.t_start().abs() > NODE_TOL || (u0.step() - h).abs() > NODE_TOL * h {
        return Err(Error::GridMismatch(format!(
            "generator on [{}, {}] with step {} does not match the state step {h}",
            u0.t_start(),
            u0.t_end(),
            u0.step()
        )));
    }
    Ok(u0.t_end())
}

/// Full admissible control on `[0, 1 + ε]` generated by `u0`.
pub fn assemble_control(
    eq: &DelayEquation,
    state: &InitialState,
    u0: &GridFunction,
) -> Result<ControlSignal> {
    assemble_control_with_tol(eq, state, u0, MOMENT_TOL)
}

pub fn assemble_control_with_tol(
    eq: &DelayEquation,
    state: &InitialState,
    u0: &GridFunction,
    tolerance: f64,
) -> Result<ControlSignal> {
    validate_state(eq, state)?;
    let epsilon = check_generator_grid(u0, state.step())?;
    moment_constraints(eq, state, epsilon)?.check(u0, tolerance)?;
    let tail = feedback_tail(eq, state, epsilon)?;
    assemble_from_tail(eq, &tail, u0)
}

/// Assembly without the moment check, for building controls from arbitrary
/// generators.
pub(crate) fn assemble_from_tail(
    eq: &DelayEquation,
    tail: &FeedbackTail,
    u0: &GridFunction,
) -> Result<ControlSignal> {
    let a0 = eq.a(0);
    let conv = u0.convolve_kernel(|t| (a0 * t).exp());
    let mut segments = Vec::with_capacity(2 * eq.order() + 1);
    segments.push(Segment {
        label: SegmentLabel::Generator,
        values: u0.clone(),
    });
    for s in 1..=eq.order() {
        let ds = eq.d(s);
        let lead = ds * a0 - eq.a(s);
        segments.push(Segment {
            label: SegmentLabel::Psi(s),
            values: tail.psi[s - 1].clone(),
        });
        let values = tail.phi[s - 1]
            .axpy(ds, u0)?
            .axpy(lead, &conv)?
            .shift(eq.delay(s));
        segments.push(Segment {
            label: SegmentLabel::Phi(s),
            values,
        });
    }
    ControlSignal::new(segments, Some(u0.clone()))
}

/// Open-loop state of a companion system driven by `u ≡ 0` on `[0, ε]`
/// and the feedback afterwards.
#[derive(Clone, Debug)]
pub struct SystemFreeResponse {
    pub epsilon: f64,
    pub trajectory: SystemTrajectory,
}

pub fn system_free_response(
    sys: &RetardedSystem,
    state: &SystemState,
    epsilon: f64,
) -> Result<SystemFreeResponse> {
    sys.require_companion()?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::EpsilonOutOfRange { epsilon, max: 1.0 });
    }
    let h = state.step();
    let zero = GridFunction::from_fn_with_step(0.0, epsilon, h, |_| 0.0)?;
    let horizon = sys.dim() as f64 + epsilon;
    let (trajectory, _) = simulate_closed_loop(sys, state, &zero, horizon)?;
    Ok(SystemFreeResponse {
        epsilon,
        trajectory,
    })
}

/// Moments `∫_0^ε (ε-τ)^{k-1} u_0 = c_k`, `k = 1..n`, with
/// `c_k = -(k-1)! X̃_k(k - 1 + ε)` read off the run with `u_0 ≡ 0`.
pub fn system_moment_constraints(
    sys: &RetardedSystem,
    state: &SystemState,
    epsilon: f64,
) -> Result<MomentConstraints> {
    let free = system_free_response(sys, state, epsilon)?;
    Ok(system_constraints_from(&free, state.step()))
}

fn system_constraints_from(free: &SystemFreeResponse, h: f64) -> MomentConstraints {
    let eps = free.epsilon;
    let n = free.trajectory.dim();
    let big_m = (1.0 / h).round() as usize;
    let m_eps = (eps / h).round() as usize;
    let mut kernels = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let mut factorial = 1.0;
    for k in 1..=n {
        if k > 1 {
            factorial *= (k - 1) as f64;
        }
        let kernel = GridFunction::from_fn(0.0, eps, m_eps, |t: f64| (eps - t).powi(k as i32 - 1))
            .expect("epsilon spans at least one step");
        kernels.push(kernel);
        let at = (k - 1) * big_m + m_eps;
        rhs.push(-factorial * free.trajectory.component(k - 1).values().samples()[at]);
    }
    MomentConstraints { kernels, rhs }
}

/// `φ_k(σ) = Σ_{j≥k} g_j X̃_j(k - 1 + σ)` and `ψ_k(t) = Σ_{j≥k} g_j X̃_j(t - 1)`
/// on `[k - 1 + ε, k]`.
pub fn system_feedback_tail(
    sys: &RetardedSystem,
    state: &SystemState,
    epsilon: f64,
) -> Result<FeedbackTail> {
    let free = system_free_response(sys, state, epsilon)?;
    system_tail_from(sys, &free, state)
}

fn system_tail_from(
    sys: &RetardedSystem,
    free: &SystemFreeResponse,
    state: &SystemState,
) -> Result<FeedbackTail> {
    let g = sys.require_companion()?;
    let n = sys.dim();
    let h = state.step();
    let big_m = state.x0[0].steps();
    let m_eps = steps_between(0.0, free.epsilon, h, "epsilon")?;
    // X̃_j at node p of [-1, n + ε], history included.
    let value = |j: usize, p: isize| -> f64 {
        if p >= 0 {
            free.trajectory.component(j).values().samples()[p as usize]
        } else {
            state.x0[j].samples()[(big_m as isize + p) as usize]
        }
    };
    let mut psi = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for k in 1..=n {
        let start = (k - 1) * big_m + m_eps;
        let end = k * big_m;
        let samples = (start..=end)
            .map(|p| {
                (k..=n)
                    .map(|j| {
                        // Left limit at t = k uses the history value at 0.
                        let q = p as isize - big_m as isize;
                        let v = if q == 0 {
                            state.x0[j - 1].last()
                        } else {
                            value(j - 1, q)
                        };
                        g[j - 1] * v
                    })
                    .sum()
            })
            .collect();
        psi.push(GridFunction::from_samples(
            start as f64 * h,
            end as f64 * h,
            samples,
        )?);
        let samples = (0..=m_eps)
            .map(|i| {
                let p = ((k - 1) * big_m + i) as isize;
                (k..=n).map(|j| g[j - 1] * value(j - 1, p)).sum()
            })
            .collect();
        phi.push(GridFunction::from_samples(0.0, free.epsilon, samples)?);
    }
    Ok(FeedbackTail { psi, phi })
}

/// Admissible control of a companion system on `[0, n + ε]`, realized by the
/// closed-loop run with `u = u0` on `[0, ε)`.
pub fn assemble_system_control(
    sys: &RetardedSystem,
    state: &SystemState,
    u0: &GridFunction,
) -> Result<ControlSignal> {
    assemble_system_control_with_tol(sys, state, u0, MOMENT_TOL)
}

pub fn assemble_system_control_with_tol(
    sys: &RetardedSystem,
    state: &SystemState,
    u0: &GridFunction,
    tolerance: f64,
) -> Result<ControlSignal> {
    let epsilon = check_generator_grid(u0, state.step())?;
    system_moment_constraints(sys, state, epsilon)?.check(u0, tolerance)?;
    let horizon = sys.dim() as f64 + epsilon;
    Ok(simulate_closed_loop(sys, state, u0, horizon)?.1)
}

/// Control of a companion system from the explicit decomposition:
/// `u_0`, then `ψ_k` on `[k - 1 + ε, k]` and
/// `φ_k + g_k/(k-1)! (t^{k-1} * u_0)` on `[k, k + ε]`.
pub fn system_control_from_tail(
    sys: &RetardedSystem,
    tail: &FeedbackTail,
    u0: &GridFunction,
) -> Result<ControlSignal> {
    let g = sys.require_companion()?;
    let mut segments = vec![Segment {
        label: SegmentLabel::Generator,
        values: u0.clone(),
    }];
    let mut factorial = 1.0;
    for k in 1..=sys.dim() {
        if k > 1 {
            factorial *= (k - 1) as f64;
        }
        segments.push(Segment {
            label: SegmentLabel::Psi(k),
            values: tail.psi[k - 1].clone(),
        });
        let conv = u0.convolve_kernel(|t| t.powi(k as i32 - 1));
        let values = tail.phi[k - 1]
            .axpy(g[k - 1] / factorial, &conv)?
            .shift(k as f64);
        segments.push(Segment {
            label: SegmentLabel::Phi(k),
            values,
        });
    }
    ControlSignal::new(segments, Some(u0.clone()))
}

/// Initial state whose admissible family contains `u`, for the one-delay
/// equation `x'(t) = a_1 x(t - 1) + u(t)`:
/// `y = -u(1)/a_1`, `x0(s) = -u(s + 1)/a_1` on `[-1 + ε, 0]` and
/// `x0(s) = -u'(s + 2)/a_1² - u(s + 1)/a_1` on `[-1, -1 + ε)`.
pub fn reconstruct_state(eq: &DelayEquation, u: &ControlSignal) -> Result<InitialState> {
    if !eq.is_simplest() {
        return Err(Error::NotSimplest);
    }
    let a1 = eq.a(1);
    if a1 == 0.0 {
        return Err(Error::InvalidEquation("a_1 = 0".into()));
    }
    let epsilon = u.horizon() - 1.0;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::EpsilonOutOfRange { epsilon, max: 1.0 });
    }
    let h = u.segments()[0].values.step();
    let end_value = u.eval_left(u.horizon()).unwrap_or(0.0);
    if end_value.abs() > 1e-6 * u.sup_norm().max(1.0) {
        return Err(Error::EndpointViolation { value: end_value });
    }
    let m_eps = steps_between(0.0, epsilon, h, "epsilon")?;
    let big_m = steps_between(0.0, 1.0, h, "unit interval")?;
    let at = |t: f64| u.eval(t).expect("inside the horizon");
    let at_left = |t: f64| u.eval_left(t).expect("inside the horizon");
    // Tail on [1, 1 + ε] with one-sided limits at the ends.
    let mut tail: Vec<f64> = (0..=m_eps).map(|i| at(1.0 + i as f64 * h)).collect();
    tail[m_eps] = at_left(1.0 + epsilon);
    let tail = GridFunction::from_samples(1.0, 1.0 + epsilon, tail)?;
    let dtail = tail.derivative();
    let samples = (0..=big_m)
        .map(|i| {
            let s = -1.0 + i as f64 * h;
            if i < m_eps {
                let from_tail = dtail.samples()[i];
                -from_tail / (a1 * a1) - at(s + 1.0) / a1
            } else if i == big_m {
                -at_left(1.0) / a1
            } else {
                -at(s + 1.0) / a1
            }
        })
        .collect();
    let x0 = GridFunction::from_samples(-1.0, 0.0, samples)?;
    InitialState::new(-at(1.0) / a1, x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{null_residual, simulate, simulate_system, system_null_residual};

    const H: f64 = 1e-3;

    fn simplest_state(y: f64) -> InitialState {
        InitialState::from_fns(y, H, |_| 0.0, None).unwrap()
    }

    fn constant(eps: f64, v: f64) -> GridFunction {
        GridFunction::from_fn_with_step(0.0, eps, H, |_| v).unwrap()
    }

    #[test]
    fn scalar_moment_examples() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let mc = moment_constraints(&eq, &simplest_state(1.0), 0.5).unwrap();
        assert!(mc.kernels[0].samples().iter().all(|&k| k == 1.0));
        assert!((mc.rhs[0] + 1.0).abs() < 1e-15);
        let zero = moment_constraints(&eq, &simplest_state(0.0), 0.5).unwrap();
        assert_eq!(zero.rhs, vec![0.0]);
        assert!(matches!(
            moment_constraints(&eq, &simplest_state(1.0), 1.0),
            Err(Error::EpsilonOutOfRange { .. })
        ));
    }

    #[test]
    fn epsilon_must_stay_below_the_smallest_gap() {
        let eq = DelayEquation::retarded(vec![0.0, 0.6, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        let st = simplest_state(1.0);
        assert!(moment_constraints(&eq, &st, 0.5).is_err());
        assert!(moment_constraints(&eq, &st, 0.3).is_ok());
    }

    #[test]
    fn simplest_tail_is_a_multiple_of_the_data() {
        let eq = DelayEquation::simplest(1.5).unwrap();
        let st = InitialState::from_fns(0.5, H, |t: f64| t.sin(), None).unwrap();
        let tail = feedback_tail(&eq, &st, 0.5).unwrap();
        let x0 = st.x0.restrict(-0.5, 0.0).unwrap();
        assert_eq!(tail.psi[0].samples(), x0.scale(-1.5).samples());
        let xt = free_trajectory(&eq, &st, 0.5).unwrap();
        assert_eq!(tail.phi[0].samples(), xt.scale(-1.5).samples());
    }

    #[test]
    fn two_delay_tail_by_hand() {
        let eq = DelayEquation::retarded(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        let st = InitialState::from_fns(1.0, H, |_| 1.0, None).unwrap();
        let tail = feedback_tail(&eq, &st, 0.25).unwrap();
        assert!(tail.psi[0].samples().iter().all(|&v| v == -2.0));
        assert!(tail.psi[1].samples().iter().all(|&v| v == -1.0));
        assert!((tail.psi[0].t_start() - 0.25).abs() < 1e-12);
        assert!((tail.psi[1].t_start() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_state_gives_zero_tail_and_control() {
        let eq = DelayEquation::new(vec![0.0, 0.5, 1.0], vec![0.2, 1.0, -1.0], vec![0.5, 0.3])
            .unwrap();
        let st = InitialState::zero(H).unwrap();
        let tail = feedback_tail(&eq, &st, 0.2).unwrap();
        assert!(tail.psi.iter().chain(&tail.phi).all(|f| f.sup_norm() == 0.0));
        let u = assemble_control(&eq, &st, &constant(0.2, 0.0)).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn simplest_hand_assembly() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let st = simplest_state(1.0);
        let u = assemble_control(&eq, &st, &constant(0.5, -2.0)).unwrap();
        let expect = |t: f64| {
            if t < 0.5 {
                -2.0
            } else if t < 1.0 {
                0.0
            } else {
                -1.0 + 2.0 * (t - 1.0)
            }
        };
        for i in 0..=1500 {
            let t = i as f64 * H;
            assert!((u.eval(t).unwrap() - expect(t)).abs() < 1e-12, "t = {t}");
        }
        let tr = simulate(&eq, &st, &u, 1.5).unwrap();
        assert!(null_residual(&tr, 1.5).unwrap() <= 1e-6);
    }

    #[test]
    fn infeasible_generator_is_rejected() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let st = simplest_state(1.0);
        // Integral -1 + 1 instead of -1.
        let r = assemble_control(&eq, &st, &constant(0.5, 0.0));
        assert!(matches!(r, Err(Error::MomentViolation { index: 0, .. })));
    }

    #[test]
    fn neutral_assembly_reaches_zero() {
        let eq = DelayEquation::new(
            vec![0.0, 0.4, 1.0],
            vec![0.5, -1.0, 0.7],
            vec![0.3, 0.5],
        )
        .unwrap();
        let st = InitialState::from_fns(
            1.0,
            H,
            |t: f64| (2.0 * t).cos(),
            Some(&mut |t: f64| -2.0 * (2.0 * t).sin()),
        )
        .unwrap();
        let mc = moment_constraints(&eq, &st, 0.3).unwrap();
        let raw = GridFunction::from_fn_with_step(0.0, 0.3, H, |t: f64| (7.0 * t).sin()).unwrap();
        let u0 = mc.project(&raw).unwrap();
        assert!(mc.max_residual(&u0).unwrap() <= 1e-12);
        let u = assemble_control(&eq, &st, &u0).unwrap();
        let tr = simulate(&eq, &st, &u, 1.3).unwrap();
        let res = null_residual(&tr, 1.3).unwrap();
        assert!(res <= 1e-5, "residual {res}");
    }

    #[test]
    fn control_is_affine_in_the_generator() {
        let eq = DelayEquation::new(vec![0.0, 0.5, 1.0], vec![0.4, 1.0, -1.0], vec![0.2, 0.6])
            .unwrap();
        let st = InitialState::from_fns(1.0, H, |_| 1.0, Some(&mut |_| 0.0)).unwrap();
        let tail = feedback_tail(&eq, &st, 0.2).unwrap();
        let f = GridFunction::from_fn_with_step(0.0, 0.2, H, |t: f64| t.cos()).unwrap();
        let g = GridFunction::from_fn_with_step(0.0, 0.2, H, |t: f64| t * t).unwrap();
        let uf = assemble_from_tail(&eq, &tail, &f).unwrap();
        let ug = assemble_from_tail(&eq, &tail, &g).unwrap();
        let zero = assemble_from_tail(&eq, &tail, &f.scale(0.0)).unwrap();
        let mix = assemble_from_tail(&eq, &tail, &f.scale(2.0).axpy(-3.0, &g).unwrap()).unwrap();
        let lin = |u: &ControlSignal| u.sub(&zero).unwrap();
        let expect = lin(&uf).scale(2.0);
        let diff = lin(&mix).sub(&expect).unwrap().sub(&lin(&ug).scale(-3.0)).unwrap();
        assert!(diff.sup_norm() <= 1e-10);
    }

    #[test]
    fn tail_depends_on_the_state_only() {
        let eq = DelayEquation::retarded(vec![0.0, 0.5, 1.0], vec![0.3, 1.0, -2.0]).unwrap();
        let st = InitialState::from_fns(0.3, H, |t: f64| (5.0 * t).sin(), None).unwrap();
        let a = feedback_tail(&eq, &st, 0.2).unwrap();
        let b = feedback_tail(&eq, &st, 0.2).unwrap();
        assert_eq!(a, b);
        let mc = moment_constraints(&eq, &st, 0.2).unwrap();
        let u1 = mc.project(&constant(0.2, 1.0)).unwrap();
        let u2 = mc.project(&GridFunction::from_fn_with_step(0.0, 0.2, H, |t| t).unwrap()).unwrap();
        let c1 = assemble_control(&eq, &st, &u1).unwrap();
        let c2 = assemble_control(&eq, &st, &u2).unwrap();
        for s in [1usize, 3] {
            assert_eq!(c1.segments()[s].values, c2.segments()[s].values);
        }
    }

    #[test]
    fn distinct_states_give_distinct_controls() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let s1 = InitialState::from_fns(1.0, H, |t: f64| t, None).unwrap();
        let s2 = InitialState::from_fns(1.0, H, |t: f64| t + 0.01, None).unwrap();
        let u = |st: &InitialState| {
            let mc = moment_constraints(&eq, st, 0.5).unwrap();
            assemble_control(&eq, st, &mc.project(&constant(0.5, 0.0)).unwrap()).unwrap()
        };
        assert!(u(&s1).segments()[1].values.sub(&u(&s2).segments()[1].values).unwrap().sup_norm() > 0.0);
    }

    #[test]
    fn system_moment_examples() {
        let sys = RetardedSystem::companion(&[0.0, 0.0]).unwrap();
        let mut st = SystemState::zero(2, H).unwrap();
        let zero = system_moment_constraints(&sys, &st, 0.5).unwrap();
        assert_eq!(zero.rhs, vec![0.0, 0.0]);
        st.y = vec![1.0, 0.0];
        let mc = system_moment_constraints(&sys, &st, 0.5).unwrap();
        assert!((mc.rhs[0] + 1.0).abs() < 1e-12);
        assert!((mc.rhs[1] + 0.5).abs() < 1e-12);
        let k2 = &mc.kernels[1];
        assert!((k2.first() - 0.5).abs() < 1e-15 && k2.last().abs() < 1e-15);

        let one = RetardedSystem::companion(&[-1.0]).unwrap();
        let mut st1 = SystemState::zero(1, H).unwrap();
        st1.y = vec![1.0];
        let mc1 = system_moment_constraints(&one, &st1, 0.5).unwrap();
        assert!((mc1.rhs[0] + 1.0).abs() < 1e-12);
    }

    fn system_example() -> (RetardedSystem, SystemState) {
        let sys = RetardedSystem::companion(&[0.7, -0.4]).unwrap();
        let x0 = vec![
            GridFunction::from_fn_with_step(-1.0, 0.0, H, |t: f64| (3.0 * t).sin()).unwrap(),
            GridFunction::from_fn_with_step(-1.0, 0.0, H, |t: f64| 1.0 + t * t).unwrap(),
        ];
        (sys, SystemState::new(vec![0.5, -1.0], x0).unwrap())
    }

    #[test]
    fn system_assembly_reaches_zero() {
        let (sys, st) = system_example();
        let mc = system_moment_constraints(&sys, &st, 0.4).unwrap();
        let u0 = mc.project(&constant(0.4, 0.0)).unwrap();
        let u = assemble_system_control(&sys, &st, &u0).unwrap();
        assert!((u.horizon() - 2.4).abs() < 1e-12);
        let tr = simulate_system(&sys, &st, &u, 2.4).unwrap();
        let res = system_null_residual(&tr, 2.4).unwrap();
        // The cascade and the moment kernels differ by O(h²) quadrature error.
        assert!(res <= 1e-4, "residual {res}");
    }

    #[test]
    fn system_residual_is_second_order() {
        let residual = |h: f64| {
            let sys = RetardedSystem::companion(&[0.7, -0.4]).unwrap();
            let x0 = vec![
                GridFunction::from_fn_with_step(-1.0, 0.0, h, |t: f64| (3.0 * t).sin()).unwrap(),
                GridFunction::from_fn_with_step(-1.0, 0.0, h, |t: f64| 1.0 + t * t).unwrap(),
            ];
            let st = SystemState::new(vec![0.5, -1.0], x0).unwrap();
            let mc = system_moment_constraints(&sys, &st, 0.4).unwrap();
            let zero = GridFunction::from_fn_with_step(0.0, 0.4, h, |_| 0.0).unwrap();
            let u0 = mc.project(&zero).unwrap();
            let u = assemble_system_control(&sys, &st, &u0).unwrap();
            let tr = simulate_system(&sys, &st, &u, 2.4).unwrap();
            system_null_residual(&tr, 2.4).unwrap()
        };
        let ratio = residual(1e-3) / residual(5e-4);
        assert!(ratio > 3.5, "ratio {ratio}");
    }

    #[test]
    fn system_decomposition_matches_closed_loop() {
        let (sys, st) = system_example();
        let eps = 0.4;
        let mc = system_moment_constraints(&sys, &st, eps).unwrap();
        let raw = GridFunction::from_fn_with_step(0.0, eps, H, |t: f64| (4.0 * t).cos()).unwrap();
        let u0 = mc.project(&raw).unwrap();
        let closed = assemble_system_control(&sys, &st, &u0).unwrap();
        let tail = system_feedback_tail(&sys, &st, eps).unwrap();
        let explicit = system_control_from_tail(&sys, &tail, &u0).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=2400 {
            let t = i as f64 * H;
            let d = closed.eval(t).unwrap() - explicit.eval(t).unwrap();
            worst = worst.max(d.abs());
        }
        assert!(worst <= 5e-5, "worst = {worst}");
    }

    #[test]
    fn one_dimensional_system_matches_scalar_assembly() {
        let sys = RetardedSystem::companion(&[-1.0]).unwrap();
        let eq = DelayEquation::simplest(1.0).unwrap();
        let st = InitialState::from_fns(0.8, H, |t: f64| (2.0 * t).cos(), None).unwrap();
        let sst = crate::simulation::system_state_from_scalar(&st).unwrap();
        let mc = moment_constraints(&eq, &st, 0.5).unwrap();
        let u0 = mc.project(&constant(0.5, 0.3)).unwrap();
        let scalar = assemble_control(&eq, &st, &u0).unwrap();
        let vector = assemble_system_control(&sys, &sst, &u0).unwrap();
        for i in 0..=1500 {
            let t = i as f64 * H;
            let d = scalar.eval(t).unwrap() - vector.eval(t).unwrap();
            assert!(d.abs() <= 1e-10, "t = {t}, d = {d}");
        }
    }

    #[test]
    fn reconstruction_round_trip() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let zero = ControlSignal::zero(1.5, H).unwrap();
        let st0 = reconstruct_state(&eq, &zero).unwrap();
        assert!(st0.is_zero());

        let st = simplest_state(1.0);
        let mc = moment_constraints(&eq, &st, 0.5).unwrap();
        let raw = GridFunction::from_fn_with_step(0.0, 0.5, H, |t: f64| {
            (std::f64::consts::PI * t / 0.5).sin()
        })
        .unwrap();
        let u0 = mc.project(&raw).unwrap();
        let u = assemble_control(&eq, &st, &u0).unwrap();
        assert!(u.eval_left(1.5).unwrap().abs() < 1e-12);
        let back = reconstruct_state(&eq, &u).unwrap();
        assert!((back.y - 1.0).abs() <= 1e-12);
        assert!(back.x0.norm_l2() <= 1e-4, "{}", back.x0.norm_l2());
    }

    #[test]
    fn reconstruction_rejects_nonzero_endpoint() {
        let eq = DelayEquation::simplest(1.0).unwrap();
        let u = ControlSignal::from_grid(
            GridFunction::from_fn_with_step(0.0, 1.5, H, |_| 1.0).unwrap(),
            SegmentLabel::Given,
        )
        .unwrap();
        assert!(matches!(
            reconstruct_state(&eq, &u),
            Err(Error::EndpointViolation { .. })
        ));
    }
}

//! Method-of-steps integration on a uniform grid.
//!
//! The grid step is taken from the initial history; every delay and the
//! horizon must be a multiple of it, so delayed arguments always land on
//! nodes. Controls and derivatives may jump at breakpoints, so both one-sided
//! limits are tracked at every node. Each step uses the exponential
//! trapezoid rule
//! `x_{i+1} = e^{a_0 h} x_i + h/2 (e^{a_0 h} g(t_i^+) + g(t_{i+1}^-))`
//! where `g` collects the delay terms and the control.

use nalgebra::{DMatrix, DVector};

use num_traits::{Float, One, Zero};

use crate::error::{Error, Result};
use crate::grid::{steps_between, GridFunction, NODE_TOL};
use crate::model::{
    validate_state, ControlSignal, DelayEquation, InitialState, RetardedSystem, Segment,
    SegmentLabel, SystemState,
};
use crate::scalar::{Real, Sample};

/// One-sided limits of `x'` at the forward nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivative<V: Sample = f64> {
    pub left: GridFunction<V>,
    pub right: GridFunction<V>,
}

/// Solution of a scalar equation: the history on `[-1, 0]` and the
/// computed part on `[0, t_end]`.
///
/// The forward part starts at `x(0) = y`; for retarded states this may differ
/// from the history value `x0(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<V: Sample = f64> {
    history: GridFunction<V>,
    forward: GridFunction<V>,
    deriv: Derivative<V>,
}

impl<V: Sample> Trajectory<V> {
    pub fn history(&self) -> &GridFunction<V> {
        &self.history
    }

    /// `x` on `[0, t_end]`.
    pub fn values(&self) -> &GridFunction<V> {
        &self.forward
    }

    pub fn deriv(&self) -> &Derivative<V> {
        &self.deriv
    }

    pub fn t_end(&self) -> V::Real {
        self.forward.t_end()
    }

    pub fn step(&self) -> V::Real {
        self.forward.step()
    }

    /// Samples on `[-1, t_end]`, using `y` at `t = 0`.
    pub fn values_full(&self) -> GridFunction<V> {
        let m = self.history.steps();
        let mut samples = self.history.samples()[..m].to_vec();
        samples.extend_from_slice(self.forward.samples());
        GridFunction::from_samples(self.history.t_start(), self.t_end(), samples)
            .expect("history and forward parts form a valid grid")
    }

    /// Largest `|x(t)|` over the nodes of `[t_start, t_stop]`.
    pub fn sup_on(&self, t_start: V::Real, t_stop: V::Real) -> Result<V::Real> {
        let tol = V::Real::of(NODE_TOL) * self.step().max(V::Real::one());
        if t_stop > self.t_end() + tol {
            return Err(Error::HorizonExceeded {
                requested: t_stop.as_f64(),
                available: self.t_end().as_f64(),
            });
        }
        let mut sup = V::Real::zero();
        for part in [&self.history, &self.forward] {
            for (t, v) in part.nodes().zip(part.samples()) {
                if t >= t_start - tol && t <= t_stop + tol {
                    sup = sup.max(v.modulus());
                }
            }
        }
        Ok(sup)
    }
}

/// `max |x(t)|` over the nodes of `[T - 1, T]`.
pub fn null_residual<V: Sample>(traj: &Trajectory<V>, horizon: V::Real) -> Result<V::Real> {
    traj.sup_on(horizon - V::Real::one(), horizon)
}

/// Integrates `eq` from `state` under `u` up to `t_end`.
pub fn simulate<V: Sample>(
    eq: &DelayEquation<V::Real>,
    state: &InitialState<V>,
    u: &ControlSignal<V::Real>,
    t_end: V::Real,
) -> Result<Trajectory<V>> {
    let tol = V::Real::of(NODE_TOL) * (V::Real::one() + t_end.abs());
    if t_end > u.horizon() + tol {
        return Err(Error::HorizonExceeded {
            requested: t_end.as_f64(),
            available: u.horizon().as_f64(),
        });
    }
    validate_state(eq, state)?;
    let h = state.step();
    let n = steps_between(V::Real::zero(), t_end, h, "simulation horizon")?;
    let (right, left) = u.node_limits(h, n)?;
    integrate(eq, state, Some((&right, &left)), n)
}

/// Integrates `eq` with `u ≡ 0`.
pub fn simulate_free<V: Sample>(
    eq: &DelayEquation<V::Real>,
    state: &InitialState<V>,
    t_end: V::Real,
) -> Result<Trajectory<V>> {
    validate_state(eq, state)?;
    let n = steps_between(V::Real::zero(), t_end, state.step(), "simulation horizon")?;
    integrate(eq, state, None, n)
}

fn integrate<V: Sample>(
    eq: &DelayEquation<V::Real>,
    state: &InitialState<V>,
    control: Option<(&[V::Real], &[V::Real])>,
    n: usize,
) -> Result<Trajectory<V>> {
    if n == 0 {
        return Err(Error::TooFewSteps { min: 1, got: 0 });
    }
    let h = state.step();
    let zero = V::Real::zero();
    let big_m = state.steps_per_unit();
    let lags = delay_steps(eq, h)?;
    let hist = state.x0.samples();
    let dhist = state.x0_deriv.as_ref().map(|d| d.samples());
    let needs_deriv = !eq.is_retarded();
    if needs_deriv && dhist.is_none() {
        return Err(Error::MissingDerivative);
    }
    let terms: Vec<(usize, V::Real, V::Real)> = (1..=eq.order())
        .map(|k| (lags[k], eq.a(k), eq.d(k)))
        .collect();

    let mut x = vec![V::zero(); n + 1];
    let mut dl = vec![V::zero(); n + 1];
    let mut dr = vec![V::zero(); n + 1];
    x[0] = state.y;
    if let Some(dh) = dhist {
        dl[0] = dh[big_m];
    }

    // Delay terms plus control at node i, as a left or right limit.
    let rhs = |x: &[V], dl: &[V], dr: &[V], i: usize, left: bool| -> V {
        let mut acc = match control {
            Some((r, l)) => V::from_real(if left { l[i] } else { r[i] }),
            None => V::zero(),
        };
        for &(m, a, d) in &terms {
            let forward = i > m || (i == m && !left);
            let xv = if forward { x[i - m] } else { hist[big_m + i - m] };
            acc += xv * a;
            if d != zero {
                let dv = if forward {
                    if left {
                        dl[i - m]
                    } else {
                        dr[i - m]
                    }
                } else {
                    dhist.expect("checked above")[big_m + i - m]
                };
                acc += dv * (-d);
            }
        }
        acc
    };

    let a0 = eq.a(0);
    let decay = (a0 * h).exp();
    let half_h = h * V::Real::of(0.5);
    let mut g_right = rhs(&x, &dl, &dr, 0, false);
    dr[0] = x[0] * a0 + g_right;
    for i in 0..n {
        let g_left = rhs(&x, &dl, &dr, i + 1, true);
        x[i + 1] = x[i] * decay + (g_right * decay + g_left) * half_h;
        dl[i + 1] = x[i + 1] * a0 + g_left;
        g_right = rhs(&x, &dl, &dr, i + 1, false);
        dr[i + 1] = x[i + 1] * a0 + g_right;
    }

    let t_end = h * V::Real::of(n as f64);
    Ok(Trajectory {
        history: state.x0.clone(),
        forward: GridFunction::from_samples(zero, t_end, x)?,
        deriv: Derivative {
            left: GridFunction::from_samples(zero, t_end, dl)?,
            right: GridFunction::from_samples(zero, t_end, dr)?,
        },
    })
}

/// Grid offsets of `r_0..r_N`.
pub(crate) fn delay_steps<R: Real>(eq: &DelayEquation<R>, h: R) -> Result<Vec<usize>> {
    eq.delays()
        .iter()
        .enumerate()
        .map(|(k, &r)| steps_between(R::zero(), r, h, &format!("delay r_{k}")))
        .collect()
}

/// Free trajectory
/// `x̃(t) = e^{a_0 t}(y + ∫_0^t e^{-a_0 τ} Σ_k [a_k x0(τ - r_k) - d_k x0'(τ - r_k)] dτ)`
/// on `[0, upto]` with `upto ≤ r_1`.
pub fn free_trajectory<V: Sample>(
    eq: &DelayEquation<V::Real>,
    state: &InitialState<V>,
    upto: V::Real,
) -> Result<GridFunction<V>> {
    validate_state(eq, state)?;
    let r1 = eq.delay(1);
    let h = state.step();
    if upto > r1 + V::Real::of(NODE_TOL) * h {
        return Err(Error::HorizonExceeded {
            requested: upto.as_f64(),
            available: r1.as_f64(),
        });
    }
    let m = steps_between(V::Real::zero(), upto, h, "free trajectory horizon")?;
    if m == 0 {
        return Err(Error::DegenerateInterval {
            start: 0.0,
            end: upto.as_f64(),
        });
    }
    let lags = delay_steps(eq, h)?;
    let big_m = state.steps_per_unit();
    let hist = state.x0.samples();
    let dhist = state.x0_deriv.as_ref().map(|d| d.samples());
    let a0 = eq.a(0);
    let integrand: Vec<V> = (0..=m)
        .map(|i| {
            let tau = h * V::Real::of(i as f64);
            let mut acc = V::zero();
            for k in 1..=eq.order() {
                let idx = big_m + i - lags[k];
                acc += hist[idx] * eq.a(k);
                let d = eq.d(k);
                if d != V::Real::zero() {
                    acc += dhist.expect("validated")[idx] * (-d);
                }
            }
            acc * (-a0 * tau).exp()
        })
        .collect();
    let integral = GridFunction::from_samples(V::Real::zero(), upto, integrand)?
        .cumulative_integral();
    Ok(integral.map(|t, v| (v + state.y) * (a0 * t).exp()))
}

/// Vector trajectory, one scalar trajectory per component.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemTrajectory {
    components: Vec<Trajectory<f64>>,
}

impl SystemTrajectory {
    pub fn components(&self) -> &[Trajectory<f64>] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &Trajectory<f64> {
        &self.components[j]
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn t_end(&self) -> f64 {
        self.components[0].t_end()
    }
}

/// `max_j max |x_j(t)|` over the nodes of `[T - 1, T]`.
pub fn system_null_residual(traj: &SystemTrajectory, horizon: f64) -> Result<f64> {
    traj.components
        .iter()
        .try_fold(0.0_f64, |acc, c| Ok(acc.max(null_residual(c, horizon)?)))
}

/// Integrates a companion-form system under `u`.
pub fn simulate_system(
    sys: &RetardedSystem,
    state: &SystemState,
    u: &ControlSignal,
    t_end: f64,
) -> Result<SystemTrajectory> {
    sys.require_companion()?;
    simulate_general_system(sys, state, u, t_end)
}

/// Integrates `x'(t) = A x(t - 1) + b u(t)` for any `(A, b)`.
pub fn simulate_general_system(
    sys: &RetardedSystem,
    state: &SystemState,
    u: &ControlSignal,
    t_end: f64,
) -> Result<SystemTrajectory> {
    if t_end > u.horizon() + NODE_TOL * (1.0 + t_end.abs()) {
        return Err(Error::HorizonExceeded {
            requested: t_end,
            available: u.horizon(),
        });
    }
    check_system_state(sys, state)?;
    let h = state.step();
    let n = steps_between(0.0, t_end, h, "simulation horizon")?;
    let (right, left) = u.node_limits(h, n)?;
    let run = integrate_system(sys, state, n, |i, _, _| (right[i], left[i]))?;
    Ok(run.trajectory)
}

fn check_system_state(sys: &RetardedSystem, state: &SystemState) -> Result<()> {
    if state.dim() != sys.dim() {
        return Err(Error::InvalidState(format!(
            "state has {} components, system has {}",
            state.dim(),
            sys.dim()
        )));
    }
    Ok(())
}

struct SystemRun {
    trajectory: SystemTrajectory,
    u_right: Vec<f64>,
    u_left: Vec<f64>,
}

/// Trapezoid integration of `x'(t) = A x(t - 1) + b u(t)`. The control
/// callback receives the node index and the delayed state `x(t_i - 1)` as
/// right and left limits, and returns `(u(t_i^+), u(t_i^-))`.
fn integrate_system(
    sys: &RetardedSystem,
    state: &SystemState,
    n: usize,
    mut control: impl FnMut(usize, &DVector<f64>, &DVector<f64>) -> (f64, f64),
) -> Result<SystemRun> {
    if n == 0 {
        return Err(Error::TooFewSteps { min: 1, got: 0 });
    }
    let dim = sys.dim();
    let h = state.step();
    let big_m = state.x0[0].steps();
    let mut x: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    x.push(DVector::from_vec(state.y.clone()));
    // x(t_i - 1) lies in the history (index i) until t_i reaches 1.
    let history_at = |idx: usize| DVector::from_iterator(dim, state.x0.iter().map(|f| f.samples()[idx]));
    let delayed = |x: &[DVector<f64>], i: usize, left: bool| -> DVector<f64> {
        if i > big_m || (i == big_m && !left) {
            x[i - big_m].clone()
        } else {
            history_at(i)
        }
    };

    let mut u_right = Vec::with_capacity(n + 1);
    let mut u_left = Vec::with_capacity(n + 1);
    let mut d_left: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    let mut d_right: Vec<DVector<f64>> = Vec::with_capacity(n + 1);

    let (xr, xl) = (delayed(&x, 0, false), delayed(&x, 0, true));
    let (ur, ul) = control(0, &xr, &xl);
    u_right.push(ur);
    u_left.push(ul);
    let mut f_right = sys.a() * xr + sys.b() * ur;
    d_left.push(sys.a() * xl + sys.b() * ul);
    d_right.push(f_right.clone());
    for i in 0..n {
        let (xr, xl) = (delayed(&x, i + 1, false), delayed(&x, i + 1, true));
        let (ur, ul) = control(i + 1, &xr, &xl);
        let f_left = sys.a() * xl + sys.b() * ul;
        let next = &x[i] + (&f_right + &f_left) * (0.5 * h);
        x.push(next);
        f_right = sys.a() * xr + sys.b() * ur;
        u_right.push(ur);
        u_left.push(ul);
        d_left.push(f_left);
        d_right.push(f_right.clone());
    }

    let t_end = h * n as f64;
    let column = |v: &[DVector<f64>], j: usize| {
        GridFunction::from_samples(0.0, t_end, v.iter().map(|x| x[j]).collect())
    };
    let components = (0..dim)
        .map(|j| {
            Ok(Trajectory {
                history: state.x0[j].clone(),
                forward: column(&x, j)?,
                deriv: Derivative {
                    left: column(&d_left, j)?,
                    right: column(&d_right, j)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SystemRun {
        trajectory: SystemTrajectory { components },
        u_right,
        u_left,
    })
}

/// Closed-loop run of a companion system: `u = u_0` on `[0, ε)` and
/// `u(t) = Σ g_k x_k(t - 1)` afterwards, up to `horizon`.
///
/// Returns the trajectory and the realized control, split at the integers
/// and at `k + ε` so that jumps of the delayed state fall on breakpoints.
pub fn simulate_closed_loop(
    sys: &RetardedSystem,
    state: &SystemState,
    u0: &GridFunction<f64>,
    horizon: f64,
) -> Result<(SystemTrajectory, ControlSignal)> {
    let g = sys.require_companion()?.to_vec();
    check_system_state(sys, state)?;
    let h = state.step();
    if u0.t_start().abs() > NODE_TOL || (u0.step() - h).abs() > NODE_TOL * h {
        return Err(Error::GridMismatch(format!(
            "generator grid (start {}, step {}) does not match the state step {h}",
            u0.t_start(),
            u0.step()
        )));
    }
    let epsilon = u0.t_end();
    let m_eps = u0.steps();
    let n = steps_between(0.0, horizon, h, "closed-loop horizon")?;
    if m_eps > n {
        return Err(Error::HorizonExceeded {
            requested: epsilon,
            available: horizon,
        });
    }
    let gen = u0.samples();
    let feedback = |x: &DVector<f64>| g.iter().zip(x.iter()).map(|(gk, xk)| gk * xk).sum::<f64>();
    let run = integrate_system(sys, state, n, |i, xr, xl| {
        let right = if i < m_eps { gen[i] } else { feedback(xr) };
        let left = if i <= m_eps { gen[i] } else { feedback(xl) };
        (right, left)
    })?;

    let big_m = state.x0[0].steps();
    let mut breaks = vec![(0usize, SegmentLabel::Generator)];
    for k in 1..=sys.dim() + 1 {
        for (node, label) in [((k - 1) * big_m + m_eps, SegmentLabel::Feedback), (k * big_m, SegmentLabel::Feedback)] {
            if node > breaks.last().map_or(0, |b| b.0) && node < n {
                breaks.push((node, label));
            }
        }
    }
    let mut segments = Vec::with_capacity(breaks.len());
    for (idx, &(start, label)) in breaks.iter().enumerate() {
        let end = breaks.get(idx + 1).map_or(n, |b| b.0);
        let mut values = run.u_right[start..end].to_vec();
        values.push(run.u_left[end]);
        segments.push(Segment {
            label,
            values: GridFunction::from_samples(start as f64 * h, end as f64 * h, values)?,
        });
    }
    let control = ControlSignal::new(segments, Some(u0.clone()))?;
    Ok((run.trajectory, control))
}

/// Scalar state of a one-dimensional system, for reductions to scalar
/// equations.
pub fn system_state_from_scalar(state: &InitialState<f64>) -> Result<SystemState> {
    SystemState::new(vec![state.y], vec![state.x0.clone()])
}

/// Change of coordinates for every node of a system trajectory.
pub fn transform_trajectory(traj: &SystemTrajectory, g: &DMatrix<f64>) -> Result<SystemTrajectory> {
    let dim = traj.dim();
    let apply = |parts: Vec<&GridFunction<f64>>| -> Result<Vec<GridFunction<f64>>> {
        let len = parts[0].len();
        let mut out = vec![Vec::with_capacity(len); dim];
        for i in 0..len {
            let v = DVector::from_iterator(dim, parts.iter().map(|p| p.samples()[i]));
            let w = g * v;
            for (o, wi) in out.iter_mut().zip(w.iter()) {
                o.push(*wi);
            }
        }
        out.into_iter()
            .map(|s| GridFunction::from_samples(parts[0].t_start(), parts[0].t_end(), s))
            .collect()
    };
    let hist = apply(traj.components.iter().map(|c| &c.history).collect())?;
    let fwd = apply(traj.components.iter().map(|c| &c.forward).collect())?;
    let dl = apply(traj.components.iter().map(|c| &c.deriv.left).collect())?;
    let dr = apply(traj.components.iter().map(|c| &c.deriv.right).collect())?;
    let components = hist
        .into_iter()
        .zip(fwd)
        .zip(dl.into_iter().zip(dr))
        .map(|((history, forward), (left, right))| Trajectory {
            history,
            forward,
            deriv: Derivative { left, right },
        })
        .collect();
    Ok(SystemTrajectory { components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: f64 = 1e-3;

    fn simplest() -> DelayEquation {
        DelayEquation::simplest(1.0).unwrap()
    }

    fn state(y: f64, x0: impl FnMut(f64) -> f64) -> InitialState {
        InitialState::from_fns(y, H, x0, None).unwrap()
    }

    fn max_err(f: &GridFunction, exact: impl Fn(f64) -> f64) -> f64 {
        f.nodes()
            .zip(f.samples())
            .map(|(t, v)| (v - exact(t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let tr = simulate_free(&simplest(), &state(0.0, |_| 0.0), 2.0).unwrap();
        assert_eq!(tr.values().sup_norm(), 0.0);
    }

    #[test]
    fn unit_initial_value_cascade() {
        let tr = simulate_free(&simplest(), &state(1.0, |_| 0.0), 2.0).unwrap();
        let err = max_err(tr.values(), |t| if t <= 1.0 { 1.0 } else { t });
        assert!(err <= 1e-8, "err = {err}");
    }

    #[test]
    fn unit_history_integrates_to_identity() {
        let tr = simulate_free(&simplest(), &state(0.0, |_| 1.0), 1.0).unwrap();
        assert!(max_err(tr.values(), |t| t) <= 1e-12);
    }

    #[test]
    fn history_is_kept_at_nodes() {
        let st = state(2.0, |t| t.sin());
        let tr = simulate_free(&simplest(), &st, 1.5).unwrap();
        assert_eq!(tr.history().samples(), st.x0.samples());
        assert_eq!(tr.values().first(), 2.0);
        let full = tr.values_full();
        assert_eq!(full.steps(), 2500);
        assert_eq!(full.samples()[1000], 2.0);
    }

    #[test]
    fn free_trajectory_matches_closed_form() {
        let st = state(1.0, |_| 1.0);
        let xt = free_trajectory(&simplest(), &st, 1.0).unwrap();
        assert!(max_err(&xt, |t| 1.0 + t) <= 1e-12);
        let zero = free_trajectory(&simplest(), &state(0.0, |_| 0.0), 0.5).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
        assert!(free_trajectory(&simplest(), &st, 0.5).unwrap().steps() == 500);
    }

    #[test]
    fn free_trajectory_is_limited_to_first_delay() {
        let eq = DelayEquation::retarded(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        let st = state(1.0, |_| 0.0);
        assert!(matches!(
            free_trajectory(&eq, &st, 0.6),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn free_trajectory_agrees_with_simulation() {
        let eq = DelayEquation::new(
            vec![0.0, 0.35, 0.7, 1.0],
            vec![-0.7, 1.2, -0.4, 0.9],
            vec![0.3, -0.5, 0.6],
        )
        .unwrap();
        let st = InitialState::from_fns(
            (0.0f64).cos() + 0.5,
            H,
            |t| (3.0 * t).cos() + 0.5 * t * t + 0.5,
            Some(&mut |t| -3.0 * (3.0 * t).sin() + t),
        )
        .unwrap();
        let xt = free_trajectory(&eq, &st, 0.3).unwrap();
        let tr = simulate_free(&eq, &st, 1.0).unwrap();
        let sim = tr.values().restrict(0.0, 0.3).unwrap();
        assert!(xt.sub(&sim).unwrap().sup_norm() <= 1e-8);
    }

    #[test]
    fn neutral_cascade_by_hand() {
        // x' + 0.5 x'(t - 1) = 0 with x0(t) = t: slope -1/2, then 1/4.
        let eq = DelayEquation::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![0.5]).unwrap();
        let st = InitialState::from_fns(0.0, H, |t| t, Some(&mut |_| 1.0)).unwrap();
        let tr = simulate_free(&eq, &st, 2.0).unwrap();
        let err = max_err(tr.values(), |t| {
            if t <= 1.0 {
                -0.5 * t
            } else {
                -0.5 + 0.25 * (t - 1.0)
            }
        });
        assert!(err <= 1e-12, "err = {err}");
        assert!((tr.deriv().left.samples()[1500] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn neutral_requires_derivative() {
        let eq = DelayEquation::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.5]).unwrap();
        let st = state(1.0, |_| 1.0);
        assert_eq!(simulate_free(&eq, &st, 1.0), Err(Error::MissingDerivative));
    }

    #[test]
    fn horizon_is_checked() {
        let u = ControlSignal::zero(1.0, H).unwrap();
        let r = simulate(&simplest(), &state(1.0, |_| 0.0), &u, 1.5);
        assert!(matches!(r, Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn delays_must_sit_on_the_grid() {
        let eq = DelayEquation::retarded(vec![0.0, 0.3333, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            simulate_free(&eq, &state(1.0, |_| 0.0), 1.0),
            Err(Error::NotOnGrid { .. })
        ));
    }

    #[test]
    fn second_order_accuracy() {
        let eq = DelayEquation::retarded(vec![0.0, 0.5, 1.0], vec![-0.5, 0.8, 1.0]).unwrap();
        let at_two = |h: f64| {
            let st = InitialState::from_fns(1.0, h, |t: f64| (2.0 * t).cos(), None).unwrap();
            let u = ControlSignal::from_grid(
                GridFunction::from_fn_with_step(0.0, 2.0, h, |t: f64| (5.0 * t).sin()).unwrap(),
                SegmentLabel::Given,
            )
            .unwrap();
            simulate(&eq, &st, &u, 2.0).unwrap().values().last()
        };
        let (a, b, c) = (at_two(0.01), at_two(0.005), at_two(0.0025));
        let order = ((a - b) / (b - c)).abs().log2();
        assert!(order >= 1.9, "order = {order}");
    }

    #[test]
    fn null_residual_reads_last_unit_window() {
        let tr = simulate_free(&simplest(), &state(1.0, |_| 0.0), 1.0).unwrap();
        assert_eq!(null_residual(&tr, 1.0).unwrap(), 1.0);
        let zero = simulate_free(&simplest(), &state(0.0, |_| 0.0), 1.0).unwrap();
        assert_eq!(null_residual(&zero, 1.0).unwrap(), 0.0);
        assert!(null_residual(&tr, 1.5).is_err());
    }

    #[test]
    fn companion_cascade_by_hand() {
        let sys = RetardedSystem::companion(&[0.0, 0.0]).unwrap();
        let mut st = SystemState::zero(2, H).unwrap();
        st.y = vec![1.0, 1.0];
        let u = ControlSignal::zero(2.5, H).unwrap();
        let tr = simulate_system(&sys, &st, &u, 2.5).unwrap();
        assert!(max_err(tr.component(0).values(), |_| 1.0) <= 1e-12);
        let err = max_err(tr.component(1).values(), |t| if t <= 1.0 { 1.0 } else { t });
        assert!(err <= 1e-10, "err = {err}");
        let zero = simulate_system(&sys, &SystemState::zero(2, H).unwrap(), &u, 2.5).unwrap();
        assert_eq!(system_null_residual(&zero, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_system_matches_scalar_equation() {
        let sys = RetardedSystem::companion(&[-1.0]).unwrap();
        let st = state(0.7, |t| (4.0 * t).sin());
        let u = ControlSignal::from_grid(
            GridFunction::from_fn_with_step(0.0, 2.0, H, |t: f64| t.cos()).unwrap(),
            SegmentLabel::Given,
        )
        .unwrap();
        let scalar = simulate(&simplest(), &st, &u, 2.0).unwrap();
        let vector = simulate_system(&sys, &system_state_from_scalar(&st).unwrap(), &u, 2.0)
            .unwrap();
        let diff = scalar.values().sub(vector.component(0).values()).unwrap();
        assert!(diff.sup_norm() <= 1e-10);
    }

    #[test]
    fn general_systems_need_the_general_entry_point() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let sys = RetardedSystem::new(a, b).unwrap();
        let st = SystemState::zero(2, H).unwrap();
        let u = ControlSignal::zero(1.0, H).unwrap();
        assert_eq!(simulate_system(&sys, &st, &u, 1.0), Err(Error::NotCompanion));
        assert!(simulate_general_system(&sys, &st, &u, 1.0).is_ok());
    }

    #[test]
    fn closed_loop_splits_at_jumps() {
        let sys = RetardedSystem::companion(&[0.5, -0.25]).unwrap();
        let mut st = SystemState::zero(2, H).unwrap();
        st.y = vec![1.0, -1.0];
        let u0 = GridFunction::from_fn_with_step(0.0, 0.3, H, |_| -1.0 / 0.3).unwrap();
        let (_, u) = simulate_closed_loop(&sys, &st, &u0, 2.3).unwrap();
        let starts: Vec<f64> = u.segments().iter().map(|s| s.values.t_start()).collect();
        let expect = [0.0, 0.3, 1.0, 1.3, 2.0];
        assert_eq!(starts.len(), expect.len());
        for (a, b) in starts.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((u.horizon() - 2.3).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn simulation_is_affine_in_the_control(
            alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
            w1 in 0.5f64..6.0, w2 in 0.5f64..6.0,
        ) {
            let h = 0.01;
            let eq = DelayEquation::new(
                vec![0.0, 0.5, 1.0], vec![0.3, -1.0, 0.5], vec![0.2, 0.4],
            ).unwrap();
            let st = InitialState::from_fns(
                1.0, h, |t: f64| 1.0 + t, Some(&mut |_| 1.0),
            ).unwrap();
            let grid = |f: &dyn Fn(f64) -> f64| ControlSignal::from_grid(
                GridFunction::from_fn_with_step(0.0, 2.0, h, f).unwrap(),
                SegmentLabel::Given,
            ).unwrap();
            let u1 = grid(&|t| (w1 * t).sin());
            let u2 = grid(&|t| (w2 * t).cos());
            let mix = grid(&|t| alpha * (w1 * t).sin() + beta * (w2 * t).cos());
            let x = |u: &ControlSignal| simulate(&eq, &st, u, 2.0).unwrap().values().clone();
            let zero = ControlSignal::zero(2.0, h).unwrap();
            let lhs = x(&mix);
            let rhs = x(&u1).scale(alpha)
                .axpy(beta, &x(&u2)).unwrap()
                .axpy(1.0 - alpha - beta, &x(&zero)).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-10);
        }
    }
}

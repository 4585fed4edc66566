//! Equations, systems, initial states and piecewise controls.

use nalgebra::{DMatrix, DVector};

use num_traits::{Float, One, Zero};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, NODE_TOL};
use crate::scalar::{Real, Sample};

/// Scalar equation
/// `x'(t) + Σ_{k≥1} d_k x'(t - r_k) = Σ_{k≥0} a_k x(t - r_k) + u(t)`
/// with `0 = r_0 < r_1 < … < r_N = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayEquation<R: Real = f64> {
    delays: Vec<R>,
    a: Vec<R>,
    d: Vec<R>,
}

impl<R: Real> DelayEquation<R> {
    /// `delays` is `r_0..r_N`, `a` is `a_0..a_N` and `d` is `d_1..d_N`
    /// (empty for a retarded equation).
    pub fn new(delays: Vec<R>, a: Vec<R>, d: Vec<R>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidEquation(msg));
        if delays.len() < 2 {
            return invalid("need at least the delays r_0 = 0 and r_N = 1".into());
        }
        let n = delays.len() - 1;
        if delays
            .iter()
            .chain(&a)
            .chain(&d)
            .any(|v| !v.is_finite())
        {
            return invalid("non-finite coefficient".into());
        }
        if delays[0] != R::zero() {
            return invalid(format!("r_0 must be 0, got {:?}", delays[0]));
        }
        if (delays[n] - R::one()).abs() > R::of(1e-12) {
            return invalid(format!("r_N must be 1, got {:?}", delays[n]));
        }
        if delays.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("delays must be strictly increasing".into());
        }
        if a.len() != n + 1 {
            return invalid(format!("expected {} a-coefficients, got {}", n + 1, a.len()));
        }
        if !d.is_empty() && d.len() != n {
            return invalid(format!("expected {n} d-coefficients, got {}", d.len()));
        }
        let d_n = d.last().copied().unwrap_or_else(R::zero);
        if d_n * d_n + a[n] * a[n] == R::zero() {
            return invalid("d_N and a_N cannot both vanish".into());
        }
        let mut delays = delays;
        delays[n] = R::one();
        Ok(Self { delays, a, d })
    }

    pub fn retarded(delays: Vec<R>, a: Vec<R>) -> Result<Self> {
        Self::new(delays, a, Vec::new())
    }

    /// `x'(t) = a1 x(t - 1) + u(t)`.
    pub fn simplest(a1: R) -> Result<Self> {
        Self::retarded(vec![R::zero(), R::one()], vec![R::zero(), a1])
    }

    /// Number of delay terms N.
    pub fn order(&self) -> usize {
        self.delays.len() - 1
    }

    pub fn delays(&self) -> &[R] {
        &self.delays
    }

    pub fn delay(&self, k: usize) -> R {
        self.delays[k]
    }

    pub fn a_coeffs(&self) -> &[R] {
        &self.a
    }

    pub fn a(&self, k: usize) -> R {
        self.a[k]
    }

    /// `d_1..d_N`, empty when the equation was built as retarded.
    pub fn d_coeffs(&self) -> &[R] {
        &self.d
    }

    /// `d_k` for `k = 1..N` (zero for retarded equations).
    pub fn d(&self, k: usize) -> R {
        debug_assert!(k >= 1);
        self.d.get(k - 1).copied().unwrap_or_else(R::zero)
    }

    pub fn is_retarded(&self) -> bool {
        self.d.iter().all(|&v| v == R::zero())
    }

    pub fn is_neutral(&self) -> bool {
        self.d.last().is_some_and(|&v| v != R::zero())
    }

    /// One delay term with `a_0 = 0` and no derivative delays.
    pub fn is_simplest(&self) -> bool {
        self.order() == 1 && self.a[0] == R::zero() && self.is_retarded()
    }

    /// Same coefficients with every `d_k` set to zero explicitly.
    pub fn with_zero_d(&self) -> Self {
        Self {
            delays: self.delays.clone(),
            a: self.a.clone(),
            d: vec![R::zero(); self.order()],
        }
    }

    /// Smallest gap between consecutive delays. Admissible families are
    /// built for `0 < ε` below this value.
    pub fn min_gap(&self) -> R {
        self.delays
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(R::infinity(), R::min)
    }

    pub fn check_epsilon(&self, epsilon: R) -> Result<()> {
        let max = self.min_gap();
        if !(epsilon > R::zero() && epsilon < max) {
            return Err(Error::EpsilonOutOfRange {
                epsilon: epsilon.as_f64(),
                max: max.as_f64(),
            });
        }
        Ok(())
    }
}

/// Vector system `x'(t) = A x(t - 1) + b u(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RetardedSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    companion_g: Option<Vec<f64>>,
}

impl RetardedSystem {
    /// Rejects pairs whose controllability matrix is rank deficient.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let sys = Self::unchecked(a, b)?;
        let (n, rank) = (sys.dim(), controllability_rank(&sys.a, &sys.b));
        if rank < n {
            return Err(Error::Uncontrollable { rank, dim: n });
        }
        Ok(sys)
    }

    /// Checks shapes only; the pair may be uncontrollable.
    pub fn unchecked(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = b.len();
        if n == 0 || a.nrows() != n || a.ncols() != n {
            return Err(Error::InvalidSystem(format!(
                "A is {}x{}, b has length {n}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSystem("non-finite entry".into()));
        }
        let companion_g = companion_coefficients(&a, &b);
        Ok(Self { a, b, companion_g })
    }

    /// Companion system with first row `-g_1 … -g_n` and `b = e_1`.
    pub fn companion(g: &[f64]) -> Result<Self> {
        let n = g.len();
        if n == 0 {
            return Err(Error::InvalidSystem("empty coefficient list".into()));
        }
        let mut a = DMatrix::zeros(n, n);
        for (k, &gk) in g.iter().enumerate() {
            a[(0, k)] = -gk;
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[0] = 1.0;
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `g_1..g_n` when `(A, b)` is exactly in companion form.
    pub fn companion_g(&self) -> Option<&[f64]> {
        self.companion_g.as_deref()
    }

    pub fn require_companion(&self) -> Result<&[f64]> {
        self.companion_g().ok_or(Error::NotCompanion)
    }

    pub fn is_controllable(&self) -> bool {
        controllability_rank(&self.a, &self.b) == self.dim()
    }

    /// Controllability matrix `(b, Ab, …, A^{n-1} b)`.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        controllability_matrix(&self.a, &self.b)
    }
}

pub(crate) fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = b.len();
    let mut c = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        c.set_column(j, &col);
        col = a * col;
    }
    c
}

/// Numerical rank with a relative singular value threshold of 1e-10.
pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}

fn controllability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    numerical_rank(&controllability_matrix(a, b))
}

fn companion_coefficients(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    if b[0] != 1.0 || b.iter().skip(1).any(|&v| v != 0.0) {
        return None;
    }
    for i in 1..n {
        for j in 0..n {
            let expected = if j + 1 == i { 1.0 } else { 0.0 };
            if a[(i, j)] != expected {
                return None;
            }
        }
    }
    Some((0..n).map(|k| -a[(0, k)]).collect())
}

/// Initial data `x(0) = y`, `x(t) = x0(t)` on `[-1, 0)`.
///
/// Neutral equations also need `x0'` and the compatibility `y = x0(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState<V: Sample = f64> {
    pub y: V,
    pub x0: GridFunction<V>,
    pub x0_deriv: Option<GridFunction<V>>,
}

impl<V: Sample> InitialState<V> {
    pub fn new(y: V, x0: GridFunction<V>) -> Result<Self> {
        check_history_grid(&x0)?;
        Ok(Self {
            y,
            x0,
            x0_deriv: None,
        })
    }

    pub fn with_derivative(mut self, x0_deriv: GridFunction<V>) -> Result<Self> {
        self.x0.check_same_grid(&x0_deriv)?;
        self.x0_deriv = Some(x0_deriv);
        Ok(self)
    }

    /// State sampled from closures on a grid with step `h` (which must divide 1).
    pub fn from_fns(
        y: V,
        h: V::Real,
        x0: impl FnMut(V::Real) -> V,
        x0_deriv: Option<&mut dyn FnMut(V::Real) -> V>,
    ) -> Result<Self> {
        let x0 = GridFunction::from_fn_with_step(-V::Real::one(), V::Real::zero(), h, x0)?;
        let state = Self::new(y, x0)?;
        match x0_deriv {
            Some(f) => {
                let d = GridFunction::from_fn_with_step(
                    -V::Real::one(),
                    V::Real::zero(),
                    h,
                    f,
                )?;
                state.with_derivative(d)
            }
            None => Ok(state),
        }
    }

    pub fn zero(h: V::Real) -> Result<Self> {
        let x0 = GridFunction::from_fn_with_step(-V::Real::one(), V::Real::zero(), h, |_| {
            V::zero()
        })?;
        let d = x0.clone();
        Self::new(V::zero(), x0)?.with_derivative(d)
    }

    /// Grid step of the history.
    pub fn step(&self) -> V::Real {
        self.x0.step()
    }

    pub fn steps_per_unit(&self) -> usize {
        self.x0.steps()
    }

    pub fn scale(&self, alpha: V::Real) -> Self {
        Self {
            y: self.y * alpha,
            x0: self.x0.scale(alpha),
            x0_deriv: self.x0_deriv.as_ref().map(|d| d.scale(alpha)),
        }
    }

    /// `|y|` plus the L² norm of the history.
    pub fn norm(&self) -> V::Real {
        (self.y.modulus_sqr() + self.x0.norm_l2_sqr()).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.y == V::zero()
            && self.x0.samples().iter().all(|&v| v == V::zero())
            && self
                .x0_deriv
                .as_ref()
                .is_none_or(|d| d.samples().iter().all(|&v| v == V::zero()))
    }
}

fn check_history_grid<V: Sample>(x0: &GridFunction<V>) -> Result<()> {
    let tol = V::Real::of(NODE_TOL);
    if (x0.t_start() + V::Real::one()).abs() > tol || x0.t_end().abs() > tol {
        return Err(Error::InvalidState(format!(
            "history must live on [-1, 0], got [{:?}, {:?}]",
            x0.t_start(),
            x0.t_end()
        )));
    }
    Ok(())
}

/// Checks that `state` belongs to the state space of `eq`.
///
/// Retarded equations accept any `(y, x0)`. Equations with derivative
/// delays need `x0'` and `y = x0(0)`.
pub fn validate_state<V: Sample>(
    eq: &DelayEquation<V::Real>,
    state: &InitialState<V>,
) -> Result<()> {
    check_history_grid(&state.x0)?;
    if eq.is_retarded() {
        return Ok(());
    }
    let deriv = state.x0_deriv.as_ref().ok_or(Error::MissingDerivative)?;
    state.x0.check_same_grid(deriv)?;
    let x0_at_zero = state.x0.last();
    let tol = V::Real::of(1e-8) * (V::Real::one() + state.y.modulus());
    if (state.y - x0_at_zero).modulus() > tol {
        return Err(Error::CompatibilityViolation {
            y: state.y.modulus().as_f64(),
            x0_at_zero: x0_at_zero.modulus().as_f64(),
        });
    }
    Ok(())
}

/// Initial data for a vector system: one history per component.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub y: Vec<f64>,
    pub x0: Vec<GridFunction<f64>>,
}

impl SystemState {
    pub fn new(y: Vec<f64>, x0: Vec<GridFunction<f64>>) -> Result<Self> {
        if y.is_empty() || y.len() != x0.len() {
            return Err(Error::InvalidState(format!(
                "{} initial values for {} histories",
                y.len(),
                x0.len()
            )));
        }
        for h in &x0 {
            check_history_grid(h)?;
            x0[0].check_same_grid(h)?;
        }
        Ok(Self { y, x0 })
    }

    pub fn zero(dim: usize, h: f64) -> Result<Self> {
        let z = GridFunction::from_fn_with_step(-1.0, 0.0, h, |_| 0.0)?;
        Self::new(vec![0.0; dim], vec![z; dim])
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn step(&self) -> f64 {
        self.x0[0].step()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v * alpha).collect(),
            x0: self.x0.iter().map(|f| f.scale(alpha)).collect(),
        }
    }

    /// Applies a change of coordinates `x ↦ G x` to every node.
    pub fn transform(&self, g: &DMatrix<f64>) -> Result<Self> {
        let n = self.dim();
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::InvalidState("transform dimension mismatch".into()));
        }
        let y = g * DVector::from_vec(self.y.clone());
        let len = self.x0[0].len();
        let mut comps = vec![Vec::with_capacity(len); n];
        for i in 0..len {
            let v = DVector::from_iterator(n, self.x0.iter().map(|f| f.samples()[i]));
            let w = g * v;
            for (c, &wi) in comps.iter_mut().zip(w.iter()) {
                c.push(wi);
            }
        }
        let x0 = comps
            .into_iter()
            .map(|s| GridFunction::from_samples(-1.0, 0.0, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(y.iter().copied().collect(), x0)
    }

    pub fn is_zero(&self) -> bool {
        self.y.iter().all(|&v| v == 0.0)
            && self
                .x0
                .iter()
                .all(|f| f.samples().iter().all(|&v| v == 0.0))
    }
}

/// What produced a piece of a control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentLabel {
    Generator,
    Psi(usize),
    Phi(usize),
    Feedback,
    Zero,
    Given,
}

impl std::fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegmentLabel::Generator => write!(f, "generator"),
            SegmentLabel::Psi(s) => write!(f, "psi_{s}"),
            SegmentLabel::Phi(s) => write!(f, "phi_{s}"),
            SegmentLabel::Feedback => write!(f, "feedback"),
            SegmentLabel::Zero => write!(f, "zero"),
            SegmentLabel::Given => write!(f, "given"),
        }
    }
}

impl std::str::FromStr for SegmentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidState(format!("unknown segment label {s:?}"));
        Ok(match s {
            "generator" => SegmentLabel::Generator,
            "feedback" => SegmentLabel::Feedback,
            "zero" => SegmentLabel::Zero,
            "given" => SegmentLabel::Given,
            _ => {
                if let Some(k) = s.strip_prefix("psi_") {
                    SegmentLabel::Psi(k.parse().map_err(|_| bad())?)
                } else if let Some(k) = s.strip_prefix("phi_") {
                    SegmentLabel::Phi(k.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment<R: Real = f64> {
    pub label: SegmentLabel,
    pub values: GridFunction<R>,
}

/// Piecewise control on `[0, T]`.
///
/// Segments are closed intervals sharing their end points. Evaluation at an
/// interior breakpoint uses the segment that starts there; the value stored
/// at the end of the previous segment is the left limit.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal<R: Real = f64> {
    segments: Vec<Segment<R>>,
    generator: Option<GridFunction<R>>,
}

impl<R: Real> ControlSignal<R> {
    pub fn new(segments: Vec<Segment<R>>, generator: Option<GridFunction<R>>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidState("control without segments".into()))?;
        let tol = R::of(NODE_TOL) * first.values.step().max(R::one());
        if first.values.t_start().abs() > tol {
            return Err(Error::InvalidState("control must start at t = 0".into()));
        }
        for w in segments.windows(2) {
            if (w[0].values.t_end() - w[1].values.t_start()).abs() > tol {
                return Err(Error::InvalidState(format!(
                    "gap between control segments at {:?} and {:?}",
                    w[0].values.t_end(),
                    w[1].values.t_start()
                )));
            }
        }
        Ok(Self {
            segments,
            generator,
        })
    }

    pub fn zero(horizon: R, h: R) -> Result<Self> {
        let values = GridFunction::from_fn_with_step(R::zero(), horizon, h, |_| R::zero())?;
        Self::new(
            vec![Segment {
                label: SegmentLabel::Zero,
                values,
            }],
            None,
        )
    }

    /// Control given by a single grid function starting at 0.
    pub fn from_grid(values: GridFunction<R>, label: SegmentLabel) -> Result<Self> {
        Self::new(vec![Segment { label, values }], None)
    }

    pub fn segments(&self) -> &[Segment<R>] {
        &self.segments
    }

    /// `u_0` on `[0, ε]`, for controls assembled from a generator.
    pub fn generator(&self) -> Option<&GridFunction<R>> {
        self.generator.as_ref()
    }

    pub fn epsilon(&self) -> Option<R> {
        self.generator.as_ref().map(|g| g.t_end())
    }

    pub fn horizon(&self) -> R {
        self.segments[self.segments.len() - 1].values.t_end()
    }

    /// Right-continuous evaluation (left-closed segments).
    pub fn eval(&self, t: R) -> Option<R> {
        let last = self.segments.len() - 1;
        let tol = R::of(1e-9) * self.segments[0].values.step();
        for (i, s) in self.segments.iter().enumerate() {
            let v = &s.values;
            if t >= v.t_start() - tol && (t < v.t_end() - tol || i == last) {
                return v.eval(t);
            }
        }
        None
    }

    /// Left limit; at `t = 0` this is the value at 0.
    pub fn eval_left(&self, t: R) -> Option<R> {
        let tol = R::of(1e-9) * self.segments[0].values.step();
        for s in &self.segments {
            let v = &s.values;
            if t > v.t_start() + tol && t <= v.t_end() + tol {
                return v.eval(t);
            }
        }
        self.eval(t)
    }

    /// `‖u‖²_{L²(0,T)}`, summed segment by segment.
    pub fn energy(&self) -> R {
        self.segments
            .iter()
            .fold(R::zero(), |acc, s| acc + s.values.norm_l2_sqr())
    }

    /// `energy(self) - energy(other)` as `⟨u - v, u + v⟩`, without the
    /// cancellation of subtracting two large energies.
    pub fn energy_gap(&self, other: &Self) -> Result<R> {
        if self.segments.len() != other.segments.len() {
            return Err(Error::GridMismatch("controls have different segments".into()));
        }
        let mut gap = R::zero();
        for (a, b) in self.segments.iter().zip(&other.segments) {
            let diff = a.values.sub(&b.values)?;
            let sum = a.values.add(&b.values)?;
            gap = gap + diff.dot(&sum)?;
        }
        Ok(gap)
    }

    pub fn scale(&self, alpha: R) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    label: s.label,
                    values: s.values.scale(alpha),
                })
                .collect(),
            generator: self.generator.as_ref().map(|g| g.scale(alpha)),
        }
    }

    /// Segment-wise `self - other` for controls with identical segmentation.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.segments.len() != other.segments.len() {
            return Err(Error::GridMismatch("different segmentations".into()));
        }
        let segments = self
            .segments
            .iter()
            .zip(&other.segments)
            .map(|(a, b)| {
                Ok(Segment {
                    label: a.label,
                    values: a.values.sub(&b.values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let generator = match (&self.generator, &other.generator) {
            (Some(a), Some(b)) => Some(a.sub(b)?),
            _ => None,
        };
        Ok(Self {
            segments,
            generator,
        })
    }

    /// Largest absolute sample over all segments.
    pub fn sup_norm(&self) -> R {
        self.segments
            .iter()
            .fold(R::zero(), |acc, s| acc.max(s.values.sup_norm()))
    }

    /// Right and left limits at the nodes `i h`, `i = 0..=steps`.
    pub(crate) fn node_limits(&self, h: R, steps: usize) -> Result<(Vec<R>, Vec<R>)> {
        let mut right = Vec::with_capacity(steps + 1);
        let mut left = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = h * R::of(i as f64);
            let missing = || Error::HorizonExceeded {
                requested: t.as_f64(),
                available: self.horizon().as_f64(),
            };
            right.push(self.eval(t).ok_or_else(missing)?);
            left.push(self.eval_left(t).ok_or_else(missing)?);
        }
        Ok((right, left))
    }
}

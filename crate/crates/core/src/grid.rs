//! Uniformly sampled functions with trapezoid quadrature.
//!
//! Every function in the crate lives on a uniform grid whose nodes include
//! the interval end points. Breakpoints of piecewise definitions are made to
//! coincide with nodes, so restriction and shifting never interpolate.

use num_traits::{Float, One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::scalar::{Real, Sample};

/// Relative tolerance for deciding that a time coincides with a grid node.
pub const NODE_TOL: f64 = 1e-9;

/// Number of steps of size `step` needed to cover `[start, end]`, failing
/// when the length is not an integer multiple of the step.
pub fn steps_between<R: Real>(start: R, end: R, step: R, what: &str) -> Result<usize> {
    let ratio = (end - start) / step;
    let n = ratio.round();
    if n < R::zero() || (ratio - n).abs() > R::of(NODE_TOL) * n.max(R::one()) {
        return Err(Error::NotOnGrid {
            what: what.to_string(),
            value: (end - start).as_f64(),
            step: step.as_f64(),
        });
    }
    Ok(n.to_usize().unwrap_or(0))
}

/// Builds a grid function on `[t_start, t_end]` with `steps` subintervals by
/// sampling `evaluator` at the nodes.
pub fn make_grid_function<V: Sample>(
    t_start: V::Real,
    t_end: V::Real,
    steps: usize,
    evaluator: impl FnMut(V::Real) -> V,
) -> Result<GridFunction<V>> {
    if steps < 2 {
        return Err(Error::TooFewSteps { min: 2, got: steps });
    }
    GridFunction::from_fn(t_start, t_end, steps, evaluator)
}

/// Samples of a function at `steps + 1` equispaced nodes of `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction<V: Sample = f64> {
    t_start: V::Real,
    t_end: V::Real,
    samples: Vec<V>,
}

impl<V: Sample> GridFunction<V> {
    pub fn from_samples(t_start: V::Real, t_end: V::Real, samples: Vec<V>) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::DegenerateInterval {
                start: t_start.as_f64(),
                end: t_end.as_f64(),
            });
        }
        if samples.len() < 2 {
            return Err(Error::TooFewSteps {
                min: 1,
                got: samples.len().saturating_sub(1),
            });
        }
        Ok(Self {
            t_start,
            t_end,
            samples,
        })
    }

    pub fn from_fn(
        t_start: V::Real,
        t_end: V::Real,
        steps: usize,
        mut f: impl FnMut(V::Real) -> V,
    ) -> Result<Self> {
        if steps < 1 {
            return Err(Error::TooFewSteps { min: 1, got: steps });
        }
        let h = (t_end - t_start) / V::Real::of(steps as f64);
        let samples = (0..=steps)
            .map(|i| {
                let t = if i == steps {
                    t_end
                } else {
                    t_start + h * V::Real::of(i as f64)
                };
                f(t)
            })
            .collect();
        Self::from_samples(t_start, t_end, samples)
    }

    pub fn zeros(t_start: V::Real, t_end: V::Real, steps: usize) -> Result<Self> {
        Self::from_fn(t_start, t_end, steps, |_| V::zero())
    }

    /// Grid on `[t_start, t_end]` with the given step, which must divide the
    /// interval length.
    pub fn from_fn_with_step(
        t_start: V::Real,
        t_end: V::Real,
        step: V::Real,
        f: impl FnMut(V::Real) -> V,
    ) -> Result<Self> {
        let steps = steps_between(t_start, t_end, step, "interval length")?;
        Self::from_fn(t_start, t_end, steps, f)
    }

    #[inline]
    pub fn t_start(&self) -> V::Real {
        self.t_start
    }

    #[inline]
    pub fn t_end(&self) -> V::Real {
        self.t_end
    }

    /// Number of subintervals M.
    #[inline]
    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn step(&self) -> V::Real {
        (self.t_end - self.t_start) / V::Real::of(self.steps() as f64)
    }

    #[inline]
    pub fn node(&self, i: usize) -> V::Real {
        if i == self.steps() {
            self.t_end
        } else {
            self.t_start + self.step() * V::Real::of(i as f64)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = V::Real> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    #[inline]
    pub fn samples(&self) -> &[V] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<V> {
        self.samples
    }

    #[inline]
    pub fn first(&self) -> V {
        self.samples[0]
    }

    #[inline]
    pub fn last(&self) -> V {
        self.samples[self.steps()]
    }

    /// Trapezoid weights for the nodes of this grid.
    pub fn weights(&self) -> Vec<V::Real> {
        trapezoid_weights(self.steps(), self.step())
    }

    pub fn integrate(&self) -> V {
        let h = self.step();
        let half = V::Real::of(0.5);
        let interior = self.samples[1..self.steps()]
            .iter()
            .fold(V::zero(), |acc, &v| acc + v);
        (interior + (self.first() + self.last()) * half) * h
    }

    /// Bilinear trapezoid pairing `∫ f g` (no conjugation).
    pub fn dot(&self, other: &Self) -> Result<V> {
        self.check_same_grid(other)?;
        Ok(weighted_sum(&self.weights(), &self.samples, &other.samples, |a, b| a * b))
    }

    /// Hermitian trapezoid inner product `∫ f conj(g)`.
    pub fn inner(&self, other: &Self) -> Result<V> {
        self.check_same_grid(other)?;
        Ok(weighted_sum(&self.weights(), &self.samples, &other.samples, |a, b| {
            a * b.conj()
        }))
    }

    pub fn norm_l2_sqr(&self) -> V::Real {
        self.weights()
            .iter()
            .zip(&self.samples)
            .fold(V::Real::zero(), |acc, (&w, &v)| acc + w * v.modulus_sqr())
    }

    pub fn norm_l2(&self) -> V::Real {
        self.norm_l2_sqr().sqrt()
    }

    pub fn sup_norm(&self) -> V::Real {
        self.samples
            .iter()
            .fold(V::Real::zero(), |acc, v| acc.max(v.modulus()))
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        let tol = V::Real::of(NODE_TOL) * self.step();
        self.steps() == other.steps()
            && (self.t_start - other.t_start).abs() <= tol
            && (self.t_end - other.t_end).abs() <= tol
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[{:?}, {:?}] with {} steps vs [{:?}, {:?}] with {} steps",
                self.t_start,
                self.t_end,
                self.steps(),
                other.t_start,
                other.t_end,
                other.steps()
            )))
        }
    }

    /// Pointwise map that may change the sample type.
    pub fn map<W: Sample<Real = V::Real>>(
        &self,
        mut f: impl FnMut(V::Real, V) -> W,
    ) -> GridFunction<W> {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, &v)| f(self.node(i), v))
            .collect();
        GridFunction {
            t_start: self.t_start,
            t_end: self.t_end,
            samples,
        }
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(V, V) -> V) -> Result<Self> {
        self.check_same_grid(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            t_start: self.t_start,
            t_end: self.t_end,
            samples,
        })
    }

    pub fn scale(&self, r: V::Real) -> Self {
        self.map(|_, v| v * r)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: V::Real, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b * alpha)
    }

    /// Running integral `t ↦ ∫_{t_start}^t f` by the trapezoid rule.
    pub fn cumulative_integral(&self) -> Self {
        let half_h = self.step() * V::Real::of(0.5);
        let mut acc = V::zero();
        let mut samples = Vec::with_capacity(self.len());
        samples.push(acc);
        for pair in self.samples.windows(2) {
            acc += (pair[0] + pair[1]) * half_h;
            samples.push(acc);
        }
        Self {
            t_start: self.t_start,
            t_end: self.t_end,
            samples,
        }
    }

    /// Causal convolution `(f * g)(t_i) = ∫_0^{t_i - t_start} f(t_i - τ) g(τ) dτ`
    /// with both factors measured from the left end of the grid.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(self.with_samples(convolve_samples(
            &self.samples,
            &other.samples,
            self.step(),
        )))
    }

    /// Convolution with a kernel given as a function of the lag `t ≥ 0`.
    pub fn convolve_kernel(&self, kernel: impl Fn(V::Real) -> V) -> Self {
        let h = self.step();
        let k: Vec<V> = (0..self.len())
            .map(|m| kernel(h * V::Real::of(m as f64)))
            .collect();
        self.with_samples(convolve_samples(&k, &self.samples, h))
    }

    /// Index of the node at time `t`, if `t` is a node.
    pub fn index_of(&self, t: V::Real) -> Option<usize> {
        let h = self.step();
        let x = (t - self.t_start) / h;
        let i = x.round();
        if i < V::Real::zero() || (x - i).abs() > V::Real::of(1e-6) {
            return None;
        }
        let i = i.to_usize()?;
        (i <= self.steps()).then_some(i)
    }

    fn index_or_err(&self, t: V::Real, what: &str) -> Result<usize> {
        self.index_of(t).ok_or_else(|| Error::NotOnGrid {
            what: what.to_string(),
            value: t.as_f64(),
            step: self.step().as_f64(),
        })
    }

    /// Restriction to `[a, b]`; both ends must be nodes.
    pub fn restrict(&self, a: V::Real, b: V::Real) -> Result<Self> {
        let i = self.index_or_err(a, "restriction start")?;
        let j = self.index_or_err(b, "restriction end")?;
        if j <= i {
            return Err(Error::DegenerateInterval {
                start: a.as_f64(),
                end: b.as_f64(),
            });
        }
        Self::from_samples(
            self.node(i),
            self.node(j),
            self.samples[i..=j].to_vec(),
        )
    }

    /// Same samples on the interval moved by `dt`.
    pub fn shift(&self, dt: V::Real) -> Self {
        Self {
            t_start: self.t_start + dt,
            t_end: self.t_end + dt,
            samples: self.samples.clone(),
        }
    }

    /// `t ↦ f(t_start + t_end - t)` on the same interval.
    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        self.with_samples(samples)
    }

    /// Piecewise-linear evaluation; `None` outside the interval.
    pub fn eval(&self, t: V::Real) -> Option<V> {
        let h = self.step();
        let x = (t - self.t_start) / h;
        let slack = V::Real::of(1e-9);
        if x < -slack || x > V::Real::of(self.steps() as f64) + slack {
            return None;
        }
        let x = x.max(V::Real::zero());
        let i = x.floor().to_usize()?.min(self.steps() - 1);
        let frac = (x - V::Real::of(i as f64)).min(V::Real::one());
        let a = self.samples[i];
        let b = self.samples[i + 1];
        Some(a * (V::Real::one() - frac) + b * frac)
    }

    /// Derivative by centered differences, second-order one-sided at the ends.
    pub fn derivative(&self) -> Self {
        let m = self.steps();
        let h = self.step();
        let s = &self.samples;
        let inv2h = V::Real::one() / (h + h);
        let mut out = Vec::with_capacity(self.len());
        if m == 1 {
            let d = (s[1] - s[0]) * (V::Real::one() / h);
            return self.with_samples(vec![d, d]);
        }
        let three = V::Real::of(3.0);
        let four = V::Real::of(4.0);
        out.push((s[0] * (-three) + s[1] * four - s[2]) * inv2h);
        for i in 1..m {
            out.push((s[i + 1] - s[i - 1]) * inv2h);
        }
        out.push((s[m] * three - s[m - 1] * four + s[m - 2]) * inv2h);
        self.with_samples(out)
    }

    fn with_samples(&self, samples: Vec<V>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self {
            t_start: self.t_start,
            t_end: self.t_end,
            samples,
        }
    }
}

impl GridFunction<f64> {
    /// Linear interpolation of `self` onto another uniform grid.
    pub fn resample(&self, t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        let tol = NODE_TOL * self.step();
        if t_start < self.t_start - tol || t_end > self.t_end + tol {
            return Err(Error::GridMismatch(format!(
                "cannot resample [{}, {}] onto [{t_start}, {t_end}]",
                self.t_start, self.t_end
            )));
        }
        Self::from_fn(t_start, t_end, steps, |t| {
            self.eval(t.clamp(self.t_start, self.t_end)).unwrap_or(0.0)
        })
    }
}

/// Trapezoid weights on `steps + 1` nodes with spacing `h`.
pub fn trapezoid_weights<R: Real>(steps: usize, h: R) -> Vec<R> {
    let mut w = vec![h; steps + 1];
    w[0] = h * R::of(0.5);
    w[steps] = h * R::of(0.5);
    w
}

fn weighted_sum<V: Sample>(
    w: &[V::Real],
    a: &[V],
    b: &[V],
    f: impl Fn(V, V) -> V,
) -> V {
    w.iter()
        .zip(a.iter().zip(b))
        .fold(V::zero(), |acc, (&wi, (&ai, &bi))| acc + f(ai, bi) * wi)
}

/// Trapezoid approximation of `∫_0^{t_i} k(t_i - τ) g(τ) dτ` at every node.
pub(crate) fn convolve_samples<V: Sample>(k: &[V], g: &[V], h: V::Real) -> Vec<V> {
    let n = g.len();
    let half = V::Real::of(0.5);
    let mut out = vec![V::zero(); n];
    for i in 1..n {
        let mut acc = V::zero();
        for j in 1..i {
            acc += k[i - j] * g[j];
        }
        acc += (k[i] * g[0] + k[0] * g[i]) * half;
        out[i] = acc * h;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn zero_function_integrates_to_zero() {
        let f = make_grid_function(0.0, 1.0, 4, |_| 0.0).unwrap();
        assert!(f.samples().iter().all(|&v| v == 0.0));
        assert_eq!(f.integrate(), 0.0);
    }

    #[test]
    fn trapezoid_is_exact_on_constants_and_affine_functions() {
        let one = make_grid_function(0.0, 1.0, 1000, |_| 1.0f64).unwrap();
        assert!((one.integrate() - 1.0).abs() < 1e-14);
        let lin = make_grid_function(0.0, 1.0, 1000, |t: f64| t).unwrap();
        assert!((lin.integrate() - 0.5).abs() < 1e-14);
        let c = make_grid_function(-2.0, 3.0, 7, |_| 2.5f64).unwrap();
        assert!((c.integrate() - 12.5).abs() < 1e-13);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(
            make_grid_function(1.0, 1.0, 4, |t: f64| t),
            Err(Error::DegenerateInterval { .. })
        ));
        assert!(matches!(
            make_grid_function(0.0, 1.0, 1, |t: f64| t),
            Err(Error::TooFewSteps { .. })
        ));
        assert!(GridFunction::<f64>::from_samples(0.0, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn convolution_of_ones_is_exact() {
        let one = GridFunction::from_fn(0.0, 1.0, 2000, |_| 1.0f64).unwrap();
        let c = one.convolve(&one).unwrap();
        for (t, v) in c.nodes().zip(c.samples()) {
            assert!((v - t).abs() <= 1e-12, "t={t} v={v}");
        }
    }

    #[test]
    fn convolution_with_zero_annihilates() {
        let z = GridFunction::zeros(0.0, 1.0, 50).unwrap();
        let g = GridFunction::from_fn(0.0, 1.0, 50, |t: f64| t.sin()).unwrap();
        assert_eq!(z.convolve(&g).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn convolution_of_identity_and_one_matches_antiderivative() {
        let f = GridFunction::from_fn(0.0, 1.0, 2000, |t: f64| t).unwrap();
        let g = GridFunction::from_fn(0.0, 1.0, 2000, |_| 1.0f64).unwrap();
        let c = f.convolve(&g).unwrap();
        let err = c
            .nodes()
            .zip(c.samples())
            .map(|(t, v)| (v - t * t / 2.0).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn convolution_requires_matching_grids() {
        let f = GridFunction::from_fn(0.0, 1.0, 10, |t: f64| t).unwrap();
        let g = GridFunction::from_fn(0.0, 1.0, 12, |t: f64| t).unwrap();
        assert!(matches!(f.convolve(&g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn restriction_and_shift_keep_node_values() {
        let f = GridFunction::from_fn(0.0, 2.0, 200, |t: f64| t.exp()).unwrap();
        let r = f.restrict(0.5, 1.25).unwrap();
        assert_eq!(r.steps(), 75);
        assert_eq!(r.first(), f.samples()[50]);
        assert_eq!(r.last(), f.samples()[125]);
        let s = r.shift(-0.5);
        assert_eq!(s.samples(), r.samples());
        assert!((s.t_start() - 0.0).abs() < 1e-15);
        assert!(f.restrict(0.5, 1.2345).is_err());
    }

    #[test]
    fn trapezoid_is_second_order() {
        let errs: Vec<f64> = [40usize, 80, 160]
            .iter()
            .map(|&m| {
                let f = GridFunction::from_fn(0.0, 1.0, m, |t: f64| (3.0 * t).sin()).unwrap();
                (f.integrate() - (1.0 - 3.0f64.cos()) / 3.0).abs()
            })
            .collect();
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(order1 >= 1.9 && order2 >= 1.9, "{order1} {order2}");
    }

    #[test]
    fn derivative_is_accurate_for_smooth_functions() {
        let f = GridFunction::from_fn(0.0, 1.0, 1000, |t: f64| t.sin()).unwrap();
        let d = f.derivative();
        let err = d
            .nodes()
            .zip(d.samples())
            .map(|(t, v)| (v - t.cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn complex_grids_integrate_componentwise() {
        let f = GridFunction::from_fn(0.0, 1.0, 400, |t: f64| {
            Complex64::new(t, 1.0)
        })
        .unwrap();
        let i = f.integrate();
        assert!((i.re - 0.5).abs() < 1e-14 && (i.im - 1.0).abs() < 1e-14);
    }

    #[test]
    fn f32_grids_work() {
        let f = GridFunction::<f32>::from_fn(0.0, 1.0, 100, |t: f32| t).unwrap();
        assert!((f.integrate() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn steps_between_detects_incommensurate_lengths() {
        assert_eq!(steps_between(0.0, 0.3, 1e-3, "x").unwrap(), 300);
        assert!(steps_between(0.0, 0.3005, 1e-3, "x").is_err());
    }

    proptest! {
        #[test]
        fn quadrature_is_linear(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            c1 in -3.0f64..3.0, c2 in -3.0f64..3.0,
        ) {
            let f = GridFunction::from_fn(0.0, 1.0, 64, |t: f64| (c1 * t).sin()).unwrap();
            let g = GridFunction::from_fn(0.0, 1.0, 64, |t: f64| (c2 * t).exp()).unwrap();
            let lhs = f.scale(a).axpy(b, &g).unwrap().integrate();
            let rhs = a * f.integrate() + b * g.integrate();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn convolution_commutes(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, len in 0.2f64..2.0) {
            let f = GridFunction::from_fn(0.0, len, 97, |t: f64| (c1 * t).cos() + t).unwrap();
            let g = GridFunction::from_fn(0.0, len, 97, |t: f64| (c2 * t).exp()).unwrap();
            let fg = f.convolve(&g).unwrap();
            let gf = g.convolve(&f).unwrap();
            let bound = 1e-12 * f.sup_norm() * g.sup_norm() * len;
            prop_assert!(fg.sub(&gf).unwrap().sup_norm() <= bound);
        }
    }
}

//! Characteristic zeros, orthogonality witnesses and the companion transform.
//!
//! The characteristic function of the scalar equation is
//! `D(z) = iz e^{iz} + Σ d_k iz e^{i(1 - r_k)z} - Σ a_k e^{i(1 - r_k)z}`,
//! so `e^{izt}` solves the free equation exactly when `D(z) = 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::{
    controllability_matrix, numerical_rank, ControlSignal, DelayEquation, InitialState,
    RetardedSystem, SegmentLabel,
};
use crate::optimal::optimal_scalar;
use crate::simulation::simulate_free;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Residual accepted for a polished zero.
pub const ZERO_TOL: f64 = 1e-10;
/// `|D'(z)|` below this marks a zero as possibly multiple.
pub const MULTIPLICITY_TOL: f64 = 1e-8;
/// `|D|` below this on a contour triggers a nudge.
const BOUNDARY_TOL: f64 = 1e-8;
const MAX_NUDGES: usize = 10;
const MIN_CELL: f64 = 1e-7;

/// `D(z)`.
pub fn char_function(eq: &DelayEquation, z: Complex64) -> Complex64 {
    let iz = I * z;
    let mut value = iz * iz.exp();
    for (k, &r) in eq.delays().iter().enumerate() {
        let e = (iz * (1.0 - r)).exp();
        if k > 0 {
            value += eq.d(k) * iz * e;
        }
        value -= eq.a(k) * e;
    }
    value
}

/// `D'(z)`.
pub fn char_derivative(eq: &DelayEquation, z: Complex64) -> Complex64 {
    let iz = I * z;
    let mut value = I * iz.exp() * (1.0 + iz);
    for (k, &r) in eq.delays().iter().enumerate() {
        let alpha = 1.0 - r;
        let e = (iz * alpha).exp();
        if k > 0 {
            value += eq.d(k) * I * e * (1.0 + iz * alpha);
        }
        value -= eq.a(k) * I * alpha * e;
    }
    value
}

/// Axis-aligned rectangle `[re_min, re_max] × [im_min, im_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Window {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        let ok = [re_min, re_max, im_min, im_max].iter().all(|v| v.is_finite());
        if !ok || re_min >= re_max || im_min >= im_max {
            return Err(Error::DegenerateInterval {
                start: re_min.min(im_min),
                end: re_max.max(im_max),
            });
        }
        Ok(Self {
            re_min,
            re_max,
            im_min,
            im_max,
        })
    }

    pub fn contains(&self, z: Complex64, tol: f64) -> bool {
        z.re >= self.re_min - tol
            && z.re <= self.re_max + tol
            && z.im >= self.im_min - tol
            && z.im <= self.im_max + tol
    }

    fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    fn center(&self) -> Complex64 {
        Complex64::new(
            0.5 * (self.re_min + self.re_max),
            0.5 * (self.im_min + self.im_max),
        )
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_min, self.im_min),
            Complex64::new(self.re_max, self.im_min),
            Complex64::new(self.re_max, self.im_max),
            Complex64::new(self.re_min, self.im_max),
        ]
    }
}

/// Region that contains every zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Localization {
    /// Retarded: every zero has `Im z ≥ lower`.
    HalfPlane { lower: f64 },
    /// Neutral: every zero has `lower ≤ Im z ≤ upper`; `nominal` is the
    /// coefficient estimate `2 + ln((Σ|a| + Σ|d| + 1)/|d_N|)`.
    Strip { lower: f64, upper: f64, nominal: f64 },
}

impl Localization {
    pub fn describe(&self) -> String {
        match self {
            Localization::HalfPlane { lower } => {
                format!("half-plane: every zero has Im z >= {lower:.6}")
            }
            Localization::Strip { lower, upper, nominal } => format!(
                "strip: every zero has {lower:.6} <= Im z <= {upper:.6} (nominal half-width {nominal:.6})"
            ),
        }
    }
}

/// Smallest `y ≥ start` on a 0.01 lattice with `holds(y)` true.
fn scan(start: f64, holds: impl Fn(f64) -> bool) -> f64 {
    let mut y = start;
    while !holds(y) && y < 1e3 {
        y += 0.01;
    }
    y
}

/// Dominant-term bounds on the imaginary parts of the zeros.
pub fn localization(eq: &DelayEquation) -> Localization {
    let n = eq.order();
    let r = eq.delays();
    let sum_a: f64 = eq.a_coeffs().iter().map(|a| a.abs()).sum();
    if eq.is_retarded() {
        return Localization::HalfPlane {
            lower: -(sum_a + 1.0),
        };
    }
    let sum_d: f64 = (1..=n).map(|k| eq.d(k).abs()).sum();
    let dn = eq.d(n).abs();
    // Above: d_N iz - a_N dominates once |z| ≥ y.
    let upper = scan(0.0, |y| {
        let lead = dn
            - (-y).exp()
            - (1..n).map(|k| eq.d(k).abs() * (-(1.0 - r[k]) * y).exp()).sum::<f64>();
        let rest = eq.a(n).abs()
            + (0..n).map(|k| eq.a(k).abs() * (-(1.0 - r[k]) * y).exp()).sum::<f64>();
        lead > 0.0 && lead * y.max(1e-12) > rest
    });
    // Below: iz e^{iz} dominates.
    let depth = scan(0.0, |y| {
        let lead = 1.0 - (1..=n).map(|k| eq.d(k).abs() * (-r[k] * y).exp()).sum::<f64>();
        let rest = eq.a(0).abs() + (1..=n).map(|k| eq.a(k).abs() * (-r[k] * y).exp()).sum::<f64>();
        lead > 0.0 && lead * y.max(1e-12) > rest
    });
    Localization::Strip {
        lower: -depth,
        upper,
        nominal: 2.0 + ((sum_a + sum_d + 1.0) / dn).ln(),
    }
}

/// `|Re z| ≤ 20π` and the localization bounds, widened to cover the nominal
/// strip for neutral equations.
pub fn default_window(eq: &DelayEquation) -> Window {
    let re_max = 20.0 * PI;
    let (lo, hi) = match localization(eq) {
        Localization::HalfPlane { lower } => {
            let n = eq.order();
            let r = eq.delays();
            let an = eq.a(n).abs();
            let upper = scan(1.0, |y| {
                let rest = (re_max + y) * (-y).exp()
                    + (0..n).map(|k| eq.a(k).abs() * (-(1.0 - r[k]) * y).exp()).sum::<f64>();
                rest < an
            });
            (lower, upper)
        }
        Localization::Strip {
            lower,
            upper,
            nominal,
        } => (lower.min(-nominal), upper.max(nominal)),
    };
    Window {
        re_min: -re_max,
        re_max,
        im_min: lo - 0.5,
        im_max: hi + 0.5,
    }
}

/// Zeros found in a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub window: Window,
    pub zeros: Vec<Complex64>,
    /// `|D(z_k)|`.
    pub residuals: Vec<f64>,
    /// `|D'(z_k)| ≤ MULTIPLICITY_TOL`, or a cell that could not separate zeros.
    pub multiplicity_flags: Vec<bool>,
    /// Argument-principle count over the whole window.
    pub count: usize,
}

impl Spectrum {
    /// Zeros sorted by modulus.
    pub fn lowest(&self, m: usize) -> Vec<Complex64> {
        let mut z = self.zeros.clone();
        z.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.re.total_cmp(&b.re)));
        z.truncate(m);
        z
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Phase change of `D` along a segment, refined until each step turns by at
/// most 0.3 rad.
fn phase_change(eq: &DelayEquation, a: Complex64, b: Complex64) -> Result<f64> {
    let pieces = ((b - a).norm() / 0.05).ceil().max(1.0) as usize;
    let mut total = 0.0;
    let mut prev_z = a;
    let mut prev = char_function(eq, a);
    if prev.norm() < BOUNDARY_TOL {
        return Err(Error::BoundaryZero { nudges: 0 });
    }
    for j in 1..=pieces {
        let z = a + (b - a) * (j as f64 / pieces as f64);
        let val = char_function(eq, z);
        total += refine_phase(eq, prev_z, prev, z, val, 0)?;
        prev_z = z;
        prev = val;
    }
    Ok(total)
}

fn refine_phase(
    eq: &DelayEquation,
    za: Complex64,
    fa: Complex64,
    zb: Complex64,
    fb: Complex64,
    depth: usize,
) -> Result<f64> {
    if fb.norm() < BOUNDARY_TOL {
        return Err(Error::BoundaryZero { nudges: 0 });
    }
    let step = (fb / fa).arg();
    if step.abs() <= 0.3 || depth >= 40 {
        return Ok(step);
    }
    let zm = 0.5 * (za + zb);
    let fm = char_function(eq, zm);
    Ok(refine_phase(eq, za, fa, zm, fm, depth + 1)? + refine_phase(eq, zm, fm, zb, fb, depth + 1)?)
}

/// Number of zeros inside `window` by the argument principle.
pub fn count_zeros(eq: &DelayEquation, window: &Window) -> Result<usize> {
    let c = window.corners();
    let mut total = 0.0;
    for j in 0..4 {
        total += phase_change(eq, c[j], c[(j + 1) % 4])?;
    }
    let winding = total / (2.0 * PI);
    let rounded = winding.round();
    if (winding - rounded).abs() > 1e-3 || rounded < 0.0 {
        return Err(Error::SingularSystem(format!(
            "argument-principle integral {winding} is not an integer"
        )));
    }
    Ok(rounded as usize)
}

/// Newton iteration on `D` from `z`.
pub fn newton_polish(eq: &DelayEquation, mut z: Complex64) -> Result<Complex64> {
    for _ in 0..60 {
        let d = char_function(eq, z);
        let dp = char_derivative(eq, z);
        if dp.norm() == 0.0 {
            break;
        }
        let step = d / dp;
        z -= step;
        if !z.re.is_finite() || !z.im.is_finite() {
            break;
        }
        if step.norm() <= 1e-15 * (1.0 + z.norm()) {
            let residual = char_function(eq, z).norm();
            if residual <= ZERO_TOL {
                return Ok(z);
            }
            return Err(Error::NotAZero { residual });
        }
    }
    let residual = char_function(eq, z).norm();
    if residual <= ZERO_TOL && z.re.is_finite() {
        Ok(z)
    } else {
        Err(Error::NewtonFailed { re: z.re, im: z.im })
    }
}

/// Counts with nudges of the window when a zero sits on the contour.
fn robust_count(eq: &DelayEquation, window: &Window) -> Result<(Window, usize)> {
    let mut w = *window;
    let scale = 1e-7 * (1.0 + window.width().max(window.height()));
    for nudge in 0..=MAX_NUDGES {
        match count_zeros(eq, &w) {
            Ok(c) => return Ok((w, c)),
            Err(Error::BoundaryZero { .. }) if nudge < MAX_NUDGES => {
                let s = scale * (nudge + 1) as f64;
                w = Window {
                    re_min: w.re_min - s,
                    re_max: w.re_max + 1.3 * s,
                    im_min: w.im_min - 0.7 * s,
                    im_max: w.im_max + 1.1 * s,
                };
            }
            Err(Error::BoundaryZero { .. }) => {
                return Err(Error::BoundaryZero { nudges: MAX_NUDGES })
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::BoundaryZero { nudges: MAX_NUDGES })
}

fn split(eq: &DelayEquation, cell: &Window) -> Result<Vec<(Window, usize)>> {
    for attempt in 0..=MAX_NUDGES {
        let shift = 0.5 + 0.013 * attempt as f64;
        let (xm, ym) = (
            cell.re_min + shift * cell.width(),
            cell.im_min + (1.0 - shift) * cell.height(),
        );
        let quads = [
            Window { re_max: xm, im_max: ym, ..*cell },
            Window { re_min: xm, im_max: ym, ..*cell },
            Window { re_max: xm, im_min: ym, ..*cell },
            Window { re_min: xm, im_min: ym, ..*cell },
        ];
        let counts: Result<Vec<usize>> = quads.iter().map(|q| count_zeros(eq, q)).collect();
        match counts {
            Ok(c) => return Ok(quads.into_iter().zip(c).collect()),
            Err(Error::BoundaryZero { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::BoundaryZero { nudges: MAX_NUDGES })
}

fn search_cell(eq: &DelayEquation, cell: Window, count: usize, out: &mut Vec<(Complex64, bool)>) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let small = cell.width().max(cell.height()) < MIN_CELL;
    if count == 1 || small {
        if let Ok(z) = newton_polish(eq, cell.center()) {
            if cell.contains(z, 1e-12 * (1.0 + z.norm())) {
                let multiple = count > 1 || char_derivative(eq, z).norm() <= MULTIPLICITY_TOL;
                out.push((z, multiple));
                return Ok(());
            }
        }
        if small {
            let z = cell.center();
            return Err(Error::NewtonFailed { re: z.re, im: z.im });
        }
    }
    for (sub, c) in split(eq, &cell)? {
        search_cell(eq, sub, c, out)?;
    }
    Ok(())
}

/// All zeros of `D` in `window`, located by argument-principle subdivision
/// and polished by Newton's method.
pub fn find_zeros(eq: &DelayEquation, window: &Window) -> Result<Spectrum> {
    let (window, count) = robust_count(eq, window)?;
    let mut found = Vec::new();
    search_cell(eq, window, count, &mut found)?;
    found.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    Ok(Spectrum {
        window,
        residuals: found.iter().map(|(z, _)| char_function(eq, *z).norm()).collect(),
        multiplicity_flags: found.iter().map(|(_, m)| *m).collect(),
        zeros: found.into_iter().map(|(z, _)| z).collect(),
        count,
    })
}

/// Maximum deviation of the free solution started from `(a, a e^{izt})`
/// from `a e^{izt}` on the nodes of `[0, t_end]`.
pub fn mode_deviation(
    eq: &DelayEquation,
    z: Complex64,
    amplitude: f64,
    h: f64,
    t_end: f64,
) -> Result<f64> {
    let mode = |t: f64| amplitude * (I * z * t).exp();
    let state = InitialState::<Complex64>::from_fns(
        Complex64::new(amplitude, 0.0),
        h,
        mode,
        Some(&mut |t: f64| I * z * mode(t)),
    )?;
    let traj = simulate_free(eq, &state, t_end)?;
    let values = traj.values();
    Ok(values
        .nodes()
        .zip(values.samples())
        .map(|(t, v)| (v - mode(t)).norm())
        .fold(0.0, f64::max))
}

/// [`mode_deviation`] with unit amplitude, after checking that `z` is a zero.
pub fn mode_check(eq: &DelayEquation, z: Complex64, h: f64, t_end: f64) -> Result<f64> {
    let residual = char_function(eq, z).norm();
    if residual > ZERO_TOL {
        return Err(Error::NotAZero { residual });
    }
    mode_deviation(eq, z, 1.0, h, t_end)
}

/// Test function of the orthogonal complement of the characteristic space.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoWitness {
    pub q: GridFunction,
    pub f: GridFunction,
}

/// `f = Σ_k (a_k q + d_k q')(t - 1 + r_k)` on `[1 - r_k, 1 - r_k + ε]` with
/// `d_0 = 1`, and zero elsewhere on `[0, 1 + ε]`. Without `q_deriv` the
/// derivative is taken by centered differences.
pub fn ortho_complement_fn(
    eq: &DelayEquation,
    q: &GridFunction,
    q_deriv: Option<&GridFunction>,
) -> Result<OrthoWitness> {
    let epsilon = q.t_end();
    eq.check_epsilon(epsilon)?;
    let scale = 1.0 + q.sup_norm();
    let value = q.first().abs().max(q.last().abs());
    if value > 1e-12 * scale {
        return Err(Error::WitnessEndpoint { value });
    }
    let dq = match q_deriv {
        Some(d) => {
            q.check_same_grid(d)?;
            d.clone()
        }
        None => q.derivative(),
    };
    let h = q.step();
    let total = crate::grid::steps_between(0.0, 1.0 + epsilon, h, "witness horizon")?;
    let m = q.steps();
    let mut f = vec![0.0; total + 1];
    for (k, &r) in eq.delays().iter().enumerate() {
        let (alpha, beta) = (eq.a(k), if k == 0 { 1.0 } else { eq.d(k) });
        let offset = crate::grid::steps_between(0.0, 1.0 - r, h, "delay")?;
        for i in 0..=m {
            f[offset + i] += alpha * q.samples()[i] + beta * dq.samples()[i];
        }
    }
    Ok(OrthoWitness {
        q: q.clone(),
        f: GridFunction::from_samples(0.0, 1.0 + epsilon, f)?,
    })
}

/// `q(t) = Σ_m c_m sin(mπt/ε)`, so `q(0) = q(ε) = 0` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SineWitness {
    pub coeffs: Vec<f64>,
    pub epsilon: f64,
}

impl SineWitness {
    /// `terms` standard-normal coefficients.
    pub fn random(rng: &mut impl Rng, epsilon: f64, terms: usize) -> Self {
        Self {
            coeffs: (0..terms).map(|_| rng.sample(StandardNormal)).collect(),
            epsilon,
        }
    }

    pub fn q(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * ((m + 1) as f64 * PI * t / self.epsilon).sin())
            .sum()
    }

    pub fn dq(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let w = (m + 1) as f64 * PI / self.epsilon;
                c * w * (w * t).cos()
            })
            .sum()
    }

    /// `(q, q')` on the grid of step `h` over `[0, ε]`.
    pub fn sample(&self, h: f64) -> Result<(GridFunction, GridFunction)> {
        let mut q = GridFunction::from_fn_with_step(0.0, self.epsilon, h, |t| self.q(t))?;
        let dq = GridFunction::from_fn_with_step(0.0, self.epsilon, h, |t| self.dq(t))?;
        // sin(mπ) is not exactly zero in floating point.
        let mut s = q.clone().into_samples();
        let last = s.len() - 1;
        s[0] = 0.0;
        s[last] = 0.0;
        q = GridFunction::from_samples(0.0, self.epsilon, s)?;
        Ok((q, dq))
    }
}

/// Composite Simpson rule, closing with the 3/8 rule on an odd step count.
pub fn simpson(samples: &[f64], h: f64) -> f64 {
    let n = samples.len() - 1;
    match n {
        0 => 0.0,
        1 => 0.5 * h * (samples[0] + samples[1]),
        2 => h / 3.0 * (samples[0] + 4.0 * samples[1] + samples[2]),
        _ => {
            let even = if n % 2 == 0 { n } else { n - 3 };
            let mut acc = 0.0;
            for i in (0..even).step_by(2) {
                acc += samples[i] + 4.0 * samples[i + 1] + samples[i + 2];
            }
            acc *= h / 3.0;
            if even < n {
                let s = &samples[even..];
                acc += 3.0 * h / 8.0 * (s[0] + 3.0 * s[1] + 3.0 * s[2] + s[3]);
            }
            acc
        }
    }
}

fn control_epsilon(control: &ControlSignal) -> Result<f64> {
    control
        .epsilon()
        .ok_or_else(|| Error::InvalidState("control has no generator segment".into()))
}

/// `(⟨v, f⟩, ‖f‖)` with `v(t) = u(T - t)`, integrating window by window so
/// that the jumps of `u` at segment ends never fall inside a quadrature cell.
pub fn witness_pairing(
    eq: &DelayEquation,
    control: &ControlSignal,
    witness: &SineWitness,
) -> Result<(f64, f64)> {
    let epsilon = control_epsilon(control)?;
    if (epsilon - witness.epsilon).abs() > 1e-12 {
        return Err(Error::GridMismatch("witness and control use different ε".into()));
    }
    let mut inner = 0.0;
    let mut norm_sqr = 0.0;
    for (k, _) in eq.delays().iter().enumerate() {
        let label = if k == 0 { SegmentLabel::Generator } else { SegmentLabel::Phi(k) };
        let seg = control
            .segments()
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::InvalidState(format!("control has no {label} segment")))?;
        let h = seg.values.step();
        let (alpha, beta) = (eq.a(k), if k == 0 { 1.0 } else { eq.d(k) });
        let vals = seg.values.samples();
        let m = vals.len() - 1;
        let f: Vec<f64> = (0..=m)
            .map(|i| {
                let s = i as f64 * h;
                alpha * witness.q(s) + beta * witness.dq(s)
            })
            .collect();
        let prod: Vec<f64> = (0..=m).map(|i| vals[m - i] * f[i]).collect();
        let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
        inner += simpson(&prod, h);
        norm_sqr += simpson(&sq, h);
    }
    Ok((inner, norm_sqr.sqrt()))
}

/// `⟨e^{izt}, f⟩` over `[0, 1 + ε]` for a sine witness.
pub fn pair_with_mode(eq: &DelayEquation, witness: &SineWitness, z: Complex64, h: f64) -> Result<Complex64> {
    let m = crate::grid::steps_between(0.0, witness.epsilon, h, "witness grid")?;
    let mut total = Complex64::new(0.0, 0.0);
    for (k, &r) in eq.delays().iter().enumerate() {
        let (alpha, beta) = (eq.a(k), if k == 0 { 1.0 } else { eq.d(k) });
        let offset = 1.0 - r;
        let mut re = Vec::with_capacity(m + 1);
        let mut im = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let s = i as f64 * h;
            let v = (I * z * (offset + s)).exp() * (alpha * witness.q(s) + beta * witness.dq(s));
            re.push(v.re);
            im.push(v.im);
        }
        total += Complex64::new(simpson(&re, h), simpson(&im, h));
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipReport {
    pub max_normalized_product: f64,
    pub products: Vec<f64>,
    pub witnesses: usize,
    pub seed: u64,
}

/// Number of sine terms in each random witness.
pub const WITNESS_TERMS: usize = 8;

/// Normalized pairings of `u(T - t)` with `count` random witnesses.
pub fn verify_control_membership(
    eq: &DelayEquation,
    control: &ControlSignal,
    count: usize,
    seed: u64,
) -> Result<MembershipReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epsilon = control_epsilon(control)?;
    let norm_v = control.energy().sqrt();
    let mut products = Vec::with_capacity(count);
    for _ in 0..count {
        let witness = SineWitness::random(&mut rng, epsilon, WITNESS_TERMS);
        let (inner, norm_f) = witness_pairing(eq, control, &witness)?;
        let denom = norm_v * norm_f;
        products.push(if denom > 0.0 { inner.abs() / denom } else { 0.0 });
    }
    Ok(MembershipReport {
        max_normalized_product: products.iter().copied().fold(0.0, f64::max),
        products,
        witnesses: count,
        seed,
    })
}

/// Checks that the time-reversed optimal control is orthogonal to random
/// members of the orthogonal complement of the characteristic space.
pub fn verify_characteristic_membership(
    eq: &DelayEquation,
    state: &InitialState,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<MembershipReport> {
    let sol = optimal_scalar(eq, state, epsilon)?;
    verify_control_membership(eq, &sol.control, count, seed)
}

/// `rank(b, Ab, …) = n` and `rank[iz e^{iz} I - A | b] = n` at every probe.
pub fn spectral_controllability(sys: &RetardedSystem, probe_zeros: &[Complex64]) -> bool {
    let n = sys.dim();
    if !sys.is_controllable() {
        return false;
    }
    probe_zeros.iter().all(|&z| {
        let lead = I * z * (I * z).exp();
        let m = DMatrix::from_fn(n, n + 1, |i, j| {
            if j == n {
                Complex64::new(sys.b()[i], 0.0)
            } else {
                let diag = if i == j { lead } else { Complex64::new(0.0, 0.0) };
                diag - sys.a()[(i, j)]
            }
        });
        let sv = m.singular_values();
        let top = sv.iter().copied().fold(0.0, f64::max);
        top > 0.0 && sv.iter().filter(|&&s| s > 1e-10 * top).count() == n
    })
}

/// Coefficients `p_1..p_n` of `det(λI - A) = λ^n + p_1 λ^{n-1} + … + p_n`
/// by the Faddeev–LeVerrier recursion.
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut m = id.clone();
    let mut p = Vec::with_capacity(n);
    for k in 1..=n {
        if k > 1 {
            m = a * &m + &id * p[k - 2];
        }
        p.push(-(a * &m).trace() / k as f64);
    }
    p
}

/// Companion form `(G A G⁻¹, G b)` of a controllable pair, with `G`.
pub fn to_companion(sys: &RetardedSystem) -> Result<(RetardedSystem, DMatrix<f64>)> {
    if let Some(g) = sys.companion_g() {
        return Ok((RetardedSystem::companion(g)?, DMatrix::identity(sys.dim(), sys.dim())));
    }
    let n = sys.dim();
    let ctrl = controllability_matrix(sys.a(), sys.b());
    let rank = numerical_rank(&ctrl);
    if rank < n {
        return Err(Error::Uncontrollable { rank, dim: n });
    }
    let g = char_poly(sys.a());
    let target = RetardedSystem::companion(&g)?;
    let target_ctrl = controllability_matrix(target.a(), target.b());
    let inv = ctrl
        .try_inverse()
        .ok_or(Error::Uncontrollable { rank: n - 1, dim: n })?;
    Ok((target, target_ctrl * inv))
}

/// Largest distance between matched eigenvalues of two matrices.
pub fn eigenvalue_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ea: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    let mut eb: Vec<Complex64> = b.complex_eigenvalues().iter().copied().collect();
    let mut worst: f64 = 0.0;
    for x in ea {
        let (j, d) = eb
            .iter()
            .enumerate()
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap_or((0, f64::INFINITY));
        worst = worst.max(d);
        if !eb.is_empty() {
            eb.swap_remove(j);
        }
    }
    worst
}

/// Applies `G` to every component of the constant vector `v`.
pub fn transform_vector(g: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (g * DVector::from_column_slice(v)).iter().copied().collect()
}

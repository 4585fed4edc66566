//! Minimum-energy null controls for linear time-delay equations.
//!
//! The crate covers scalar retarded and neutral equations
//! `x'(t) + Σ d_k x'(t - r_k) = Σ a_k x(t - r_k) + u(t)` and companion-form
//! systems `x'(t) = A x(t - 1) + b u(t)`:
//!
//! - [`grid`]: uniformly sampled functions, trapezoid quadrature, convolution.
//! - [`model`]: equations, systems, initial states, piecewise controls.
//! - [`simulation`]: method-of-steps integration and free trajectories.
//! - [`admissible`]: moment constraints and the admissible-control families.
//! - [`optimal`]: closed-form minimum-energy generators.
//! - [`oracle`]: brute-force KKT and Volterra solvers for cross-checks.
//! - [`spectral`]: characteristic zeros, orthogonality witnesses, companion form.
//!
//! Grid functions, equations and the integrator are generic over the sample
//! type; the solvers work in `f64`. The aliases below fix the common choices.

pub mod admissible;
pub mod config;
pub mod error;
pub mod export;
pub mod grid;
pub mod model;
pub mod optimal;
pub mod oracle;
pub mod scalar;
pub mod simulation;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{make_grid_function, GridFunction};
pub use model::{
    validate_state, ControlSignal, DelayEquation, InitialState, RetardedSystem, Segment,
    SegmentLabel, SystemState,
};
pub use scalar::{Real, Sample};

use num_complex::Complex64;

/// Real grid function in double precision.
pub type RealGrid = GridFunction<f64>;
/// Complex grid function in double precision.
pub type ComplexGrid = GridFunction<Complex64>;
/// Scalar equation with `f64` coefficients.
pub type Equation = DelayEquation<f64>;
/// Real initial state in double precision.
pub type State = InitialState<f64>;
/// Complex initial state, used for exponential modes.
pub type ComplexState = InitialState<Complex64>;
/// Control signal in double precision.
pub type Control = ControlSignal<f64>;

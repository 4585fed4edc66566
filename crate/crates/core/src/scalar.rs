//! Scalar traits for the grid calculus.
//!
//! Grid functions, equations and the method-of-steps integrator are generic
//! over the sample type: `f32`/`f64` for real trajectories and
//! `Complex<f32>`/`Complex<f64>` for the exponential modes used by the
//! spectral checks. The solver modules are written against `f64`.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, Zero};
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Real floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static + Sample<Real = Self>
{
    /// Converts an `f64` literal into this type.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    /// Lossy conversion used for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Value stored at a grid node.
pub trait Sample:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + Mul<Output = Self>
    + AddAssign
    + Mul<<Self as Sample>::Real, Output = Self>
{
    type Real: Real;

    fn from_real(r: Self::Real) -> Self;
    fn modulus(self) -> Self::Real;
    fn conj(self) -> Self;

    fn modulus_sqr(self) -> Self::Real {
        let m = self.modulus();
        m * m
    }
}

macro_rules! real_sample {
    ($t:ty) => {
        impl Sample for $t {
            type Real = $t;

            #[inline]
            fn from_real(r: $t) -> Self {
                r
            }

            #[inline]
            fn modulus(self) -> $t {
                self.abs()
            }

            #[inline]
            fn conj(self) -> Self {
                self
            }

            #[inline]
            fn modulus_sqr(self) -> $t {
                self * self
            }
        }
    };
}

macro_rules! complex_sample {
    ($t:ty) => {
        impl Sample for Complex<$t> {
            type Real = $t;

            #[inline]
            fn from_real(r: $t) -> Self {
                Complex::new(r, 0.0)
            }

            #[inline]
            fn modulus(self) -> $t {
                self.norm()
            }

            #[inline]
            fn conj(self) -> Self {
                Complex::conj(&self)
            }

            #[inline]
            fn modulus_sqr(self) -> $t {
                self.norm_sqr()
            }
        }
    };
}

real_sample!(f32);
real_sample!(f64);
complex_sample!(f32);
complex_sample!(f64);

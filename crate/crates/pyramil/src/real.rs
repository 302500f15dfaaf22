//! Scalar abstraction over `f32` and `f64`.
//!
//! Production code trains and stores features at `f32`. Verification code
//! re-runs the same kernels at `f64` so finite-difference gradient checks are
//! not smothered by single-precision rounding noise. Every numeric kernel in
//! the crate is therefore generic over [`Real`].

use ndarray::LinalgScalar;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by the numeric kernels in this crate.
pub trait Real: Float + LinalgScalar + Sum + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant, rounding to the nearest representable value.
    fn from_f64(value: f64) -> Self;

    /// Widens to `f64` for accumulation, logging, and comparisons.
    fn as_f64(self) -> f64;

    /// Draws one standard-normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draws uniformly from `[-bound, bound]`.
    fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, bound: Self) -> Self;
}

/// Shorthand for lifting an `f64` constant into the active scalar type.
pub fn real<F: Real>(value: f64) -> F {
    F::from_f64(value)
}

impl Real for f32 {
    fn from_f64(value: f64) -> Self {
        value as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, bound: Self) -> Self {
        Uniform::new_inclusive(-bound, bound)
            .expect("uniform bound must be finite and non-negative")
            .sample(rng)
    }
}

impl Real for f64 {
    fn from_f64(value: f64) -> Self {
        value
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, bound: Self) -> Self {
        Uniform::new_inclusive(-bound, bound)
            .expect("uniform bound must be finite and non-negative")
            .sample(rng)
    }
}

//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst};
use rustfft::FftNum;

/// Floating point scalar: `f32` or `f64`.
///
/// Everything in the crate is generic over this trait. Use `f64` for the
/// analytic identities (their tolerances sit near 1e-8); `f32` is fine for
/// sampling and for training the toy networks.
pub trait Real:
    Float
    + FloatConst
    + FftNum
    + Sum
    + Default
    + Debug
    + Display
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;
    /// Widening (or identity) conversion to `f64`.
    fn as_f64(self) -> f64;
    /// Same as `of(x as f64)`.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Tolerance that is `tol` in double precision but never tighter than a
/// fixed multiple of the type's machine epsilon.
pub fn loose_tol<R: Real>(tol: f64, eps_multiple: f64) -> R {
    R::of(tol).max(R::epsilon() * R::of(eps_multiple))
}

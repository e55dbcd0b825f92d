//! The floating-point element type shared by every tensor and model.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst};

/// Element type of tensors, parameters and losses.
///
/// Implemented for `f32` and `f64`. Everything numeric in this crate is
/// generic over it; the crate root exposes `f64` aliases because the
/// gradient checks need double precision.
pub trait Scalar:
    Float
    + FloatConst
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for constants and hyperparameters.
    fn of(x: f64) -> Self;

    /// Widening conversion to `f64`, used for serialization and reports.
    fn as_f64(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

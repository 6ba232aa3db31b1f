//! Scalar abstraction for the floating-point kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the numeric kernels are generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, never failing for finite inputs.
    fn from_real(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("f64 converts to scalar")
    }

    /// Widening conversion to `f64`.
    fn to_real(self) -> f64;
}

impl Scalar for f32 {
    fn to_real(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_real(self) -> f64 {
        self
    }
}

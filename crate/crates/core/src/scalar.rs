//! Scalar abstraction for the numeric core.

use ndarray::{LinalgScalar, ScalarOperand};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the numeric core is generic over.
///
/// Implemented by `f32` and `f64`. `LinalgScalar` gives access to the
/// GEMM-backed `dot` in ndarray; the rest is ordinary float arithmetic.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Display
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Byte width of the on-disk encoding (4 or 8).
    const DTYPE_BYTES: u8;

    fn cast(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }

    fn cast_usize(v: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(v).expect("usize converts to scalar")
    }
}

impl Scalar for f32 {
    const DTYPE_BYTES: u8 = 4;
}

impl Scalar for f64 {
    const DTYPE_BYTES: u8 = 8;
}

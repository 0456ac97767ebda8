//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the geometry, renderer and field are generic over.
///
/// Implemented for `f32` and `f64`. Training paths are exercised in `f64`;
/// `f32` is supported for inference.
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Default
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
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
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
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
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

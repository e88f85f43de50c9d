//! Floating-point scalar abstraction shared by the geometric kernels.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    <T as FromPrimitive>::from_f64(x).expect("literal representable in scalar type")
}

/// Converts `T` into `f64`.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    <T as ToPrimitive>::to_f64(&x).unwrap_or(f64::NAN)
}

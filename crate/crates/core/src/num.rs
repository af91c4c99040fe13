//! Scalar abstraction for the numeric parts of the platform.
//!
//! Metric and forecasting code is written against [`Scalar`] so it can be
//! instantiated for `f32` or `f64`. The participation adjustment only needs
//! field operations and is additionally usable with exact rationals.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating point scalar: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Anything closed under `+ - * /` that can be built from counts.
/// Covers the float types as well as `num_rational::Ratio<i64>`.
pub trait Field: Num + Copy + FromPrimitive + PartialOrd + Debug {}

impl<T> Field for T where T: Num + Copy + FromPrimitive + PartialOrd + Debug {}

pub(crate) fn from_usize<T: FromPrimitive>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

/// Neumaier-compensated sum.
pub fn compensated_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let (mut sum, mut carry) = (T::zero(), T::zero());
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry = carry + ((sum - t) + v);
        } else {
            carry = carry + ((v - t) + sum);
        }
        sum = t;
    }
    sum + carry
}

pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    (!values.is_empty()).then(|| compensated_sum(values.iter().copied()) / from_usize::<T>(values.len()))
}

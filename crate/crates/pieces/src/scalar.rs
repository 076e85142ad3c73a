//! Floating-point abstraction for the closed-form parts of the model.
//!
//! Thresholds, free levels and the free IDS are written once over [`Real`];
//! the eigen solvers and quadrature are `f64` only.

use num_traits::{Float, FloatConst, FromPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + Send + Sync + std::fmt::Debug + 'static
{
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + Send + Sync + std::fmt::Debug + 'static
{
}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in target float")
}

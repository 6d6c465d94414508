//! Scalar abstraction shared by every numerical module.

use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Display, LowerExp};

/// Real floating point type usable throughout the crate.
///
/// Dense linear algebra goes through `nalgebra`, sparse factorizations through
/// `faer`, so the scalar has to satisfy both ecosystems.
pub trait Real:
    nalgebra::RealField
    + faer::traits::RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal is representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Machine epsilon of the type.
    fn eps() -> Self;
}

impl Real for f64 {
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

/// Euclidean dot product of two equally sized slices.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

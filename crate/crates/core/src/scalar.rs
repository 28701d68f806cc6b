//! Scalar abstraction shared by every numerical module.
//!
//! Everything that touches LAPACK is generic over [`Real`], which is
//! implemented for `f32` and `f64`. Transcendental functions come from
//! `ndarray_linalg::Scalar`; the helpers below cover the handful of
//! `num_traits::Float` operations that would otherwise clash with it.

use ndarray::ScalarOperand;
use ndarray_linalg::{Lapack, Scalar};
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Real: Lapack + Scalar<Real = Self> + ScalarOperand + PartialOrd + Send + Sync {
    /// Converts an `f64` literal. Panics only for values unrepresentable in `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("literal not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("real scalar converts to f64")
    }

    #[inline]
    fn from_count(v: usize) -> Self {
        Self::lit(v as f64)
    }

    #[inline]
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }

    #[inline]
    fn fmax(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    #[inline]
    fn fmin(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// Machine epsilon of the underlying format.
    fn eps() -> Self;

    #[inline]
    fn ln_2pi() -> Self {
        Self::lit((2.0 * std::f64::consts::PI).ln())
    }
}

impl Real for f32 {
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

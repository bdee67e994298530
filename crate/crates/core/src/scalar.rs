use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used throughout the crate.
///
/// Implemented for `f32` and `f64`. Literals go through [`Scalar::lit`] so
/// that constants read naturally in generic code.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default slack used by the inequality checkers.
pub const DEFAULT_SLACK: f64 = 1e-9;

/// Absolute tolerance of the bisection used to invert class-K∞ functions.
pub const INVERSE_TOL: f64 = 1e-12;

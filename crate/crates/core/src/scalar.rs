//! Numeric abstraction shared by the geometry, histogram and metric code.
//!
//! Everything that only needs field arithmetic and ordering is written against
//! [`Scalar`], so the same routines run on `f32`, `f64`, and exact rationals
//! such as [`num_rational::Ratio<i128>`]. Code that needs square roots or
//! rounding asks for [`num_traits::Float`] on top.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Ordered field element usable by the engine's numeric routines.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Exact conversion of a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// `num / den` computed in the scalar type, so rationals stay exact.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    /// Conversion from a configuration constant. Rationals get the nearest
    /// fraction the backing integer type can hold.
    fn from_real(x: f64) -> Self {
        Self::from_f64(x).expect("real constant representable in scalar type")
    }

    fn to_real(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn clamp_between(self, lo: Self, hi: Self) -> Self {
        self.max_of(lo).min_of(hi)
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

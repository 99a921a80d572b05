//! Scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the solvers (`f32` or `f64`).
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Unit roundoff of the type.
    #[inline]
    fn machine_eps() -> Self {
        Self::default_epsilon()
    }

    /// Whether the type carries about 16 significant digits.
    #[inline]
    fn is_double() -> bool {
        Self::machine_eps().to_f64_lossy() < 1e-10
    }
}

impl<T> Scalar for T where
    T: RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

/// Picks `double` when the scalar is double precision and `single` otherwise.
#[inline]
pub(crate) fn by_precision<T: Scalar>(double: f64, single: f64) -> T {
    if T::is_double() {
        T::lit(double)
    } else {
        T::lit(single)
    }
}

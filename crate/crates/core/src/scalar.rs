//! Floating point scalar used by the numeric kernels.

use std::fmt::{Debug, Display};

/// f32 or f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64, used for literals and config values.
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

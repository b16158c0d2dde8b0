use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the estimators are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + FromStr
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Largest tolerated departure of a transition-matrix row sum from one.
    fn stochastic_tol() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_usize_exact(x: usize) -> Self {
        Self::from_usize(x).expect("count fits scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn stochastic_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn stochastic_tol() -> Self {
        1e-5
    }
}

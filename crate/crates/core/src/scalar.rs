use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole toolkit is generic over.
///
/// Implemented for `f32` and `f64`. Constants that depend on the precision
/// (finite-difference steps, ridge regularisation, pivot thresholds) live
/// here so numerical code never hard-codes a double-precision value.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + serde::Serialize
    + 'static
{
    /// Base step of central differences.
    const FD_STEP: f64;
    /// Ridge added to the normalised Gram matrix of every regression.
    const RIDGE: f64;
    /// Normalised Cholesky pivots below this value mark a dependent column.
    const PIVOT_TOL: f64;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const FD_STEP: f64 = 1e-6;
    const RIDGE: f64 = 1e-8;
    const PIVOT_TOL: f64 = 1e-7;
}

impl Real for f32 {
    const FD_STEP: f64 = 1e-3;
    const RIDGE: f64 = 1e-5;
    const PIVOT_TOL: f64 = 1e-3;
}

/// Sample mean and standard error of the mean.
pub fn mean_and_std_err<T: Real>(values: &[T]) -> (T, T) {
    let n = values.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let nf = T::from_count(n);
    let mean = values.iter().copied().sum::<T>() / nf;
    if n == 1 {
        return (mean, T::zero());
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::from_count(n - 1);
    (mean, (var / nf).sqrt())
}

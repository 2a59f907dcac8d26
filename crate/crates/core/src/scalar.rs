//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar usable by the simulators, risk kit and networks: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Converts an `f64` literal. Every finite `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize must convert")
    }
}

impl Scalar for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (-x * T::FRAC_1_SQRT_2()).erfc()
}

/// Standard normal density.
#[inline]
pub fn norm_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() * T::lit(0.5);
    inv_sqrt_2pi * (-x * x * T::lit(0.5)).exp()
}

/// `x⁺ = max(x, 0)`.
#[inline]
pub fn pos<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Total order for finite values; NaNs compare equal.
pub(crate) fn cmp<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}

pub(crate) fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Sample standard deviation with the `n - 1` denominator.
pub(crate) fn sample_std<T: Scalar>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_usize_lossy(n - 1)).sqrt()
}

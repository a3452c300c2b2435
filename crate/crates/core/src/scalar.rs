//! Scalar abstraction shared by every solver in the crate.
//!
//! All numerical code is written against [`Scalar`] so the same recursion runs
//! in `f32` or `f64`. The crate root exports `f64` aliases for the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating point type usable by the solvers: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static {
    /// Converts an `f64` literal. Panics only for values the type cannot hold at all.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    /// Lossy conversion used for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest tolerance that still makes sense for the type: the requested
    /// value, floored at a small multiple of machine epsilon.
    fn tol(requested: f64) -> Self {
        Self::lit(requested).max(Self::epsilon() * Self::lit(64.0))
    }

    fn half() -> Self {
        Self::lit(0.5)
    }

    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerical tolerances used by the solvers and checkers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances<T> {
    /// Implicit one-step root solve.
    pub root: T,
    /// Complementarity products in the minimality check.
    pub comp: T,
    /// Limit of the truncation scheme.
    pub conv: T,
    /// Game value against the reflected solution.
    pub game: T,
    /// E^f super/sub-martingale classification.
    pub class: T,
    /// Iteration cap of the root solver.
    pub max_iter: usize,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        Tolerances {
            root: T::tol(1e-12),
            comp: T::tol(1e-10),
            conv: T::tol(1e-8),
            game: T::tol(1e-8),
            class: T::tol(1e-9),
            max_iter: 200,
        }
    }
}

/// `(x)^+`
pub fn pos<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// Clamps `x` into `[lo, hi]`; assumes `lo <= hi`.
pub fn clamp<T: Scalar>(x: T, lo: T, hi: T) -> T {
    x.max(lo).min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_is_floored_for_single_precision() {
        assert_eq!(<f64 as Scalar>::tol(1e-12), 1e-12);
        assert!(<f32 as Scalar>::tol(1e-12) > 1e-6);
    }

    #[test]
    fn clamp_and_positive_part() {
        assert_eq!(clamp(3.0, -1.0, 1.0), 1.0);
        assert_eq!(clamp(-3.0_f32, -1.0, 1.0), -1.0);
        assert_eq!(pos(-2.0), 0.0);
        assert_eq!(pos(2.0), 2.0);
    }
}

//! Floating-point abstraction shared by the numerical kernels.
//!
//! Everything that does arithmetic on data (regression trees, imputers,
//! reductions, density estimates) is written against [`Scalar`] so the same
//! code runs in `f32` or `f64`. The panel data model and the index layer
//! stay on `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    'static
    + Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
{
    /// Converts an `f64` literal. Panics only if `Self` cannot represent
    /// finite `f64` values, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Convergence floor used by iterative solvers: the requested tolerance,
    /// but never tighter than a few ulps of the type.
    #[inline]
    fn solver_tolerance(requested: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(4.0);
        Self::lit(requested).max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_tolerance_respects_type_precision() {
        assert_eq!(f64::solver_tolerance(1e-12), 1e-12);
        assert!(f32::solver_tolerance(1e-12) > 1e-7);
    }
}

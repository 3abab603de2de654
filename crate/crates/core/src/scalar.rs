//! Floating-point abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Real scalar usable by the data model and the closed-form kernels.
///
/// Implemented for `f32` and `f64`. The statistical pipelines (Cox fits,
/// estimating equations, simulation) run in `f64`; the trait keeps the
/// path model and the time-transform math reusable at either precision.
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Neumaier-compensated sum, used where summation order would otherwise leak
/// into bit-level results.
pub fn compensated_sum<F: Scalar, I: IntoIterator<Item = F>>(values: I) -> F {
    let mut sum = F::zero();
    let mut comp = F::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

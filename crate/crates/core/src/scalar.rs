use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar the decomposition code is generic over.
///
/// `RealField` supplies the field operations and the dense decompositions
/// (SVD, QR, symmetric eigen) through nalgebra; `ToPrimitive` is used for
/// reporting.
pub trait Scalar: RealField + Copy + ToPrimitive + Debug + Display + Send + Sync {
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Lossy conversion for reports and serialization.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    fn epsilon() -> Self;

    fn infinity() -> Self;

    fn is_finite_value(self) -> bool;
}

impl Scalar for f64 {
    fn epsilon() -> Self {
        f64::EPSILON
    }
    fn infinity() -> Self {
        f64::INFINITY
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    fn epsilon() -> Self {
        f32::EPSILON
    }
    fn infinity() -> Self {
        f32::INFINITY
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

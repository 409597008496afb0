//! Scalar abstraction shared by the math kernel.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating-point scalar usable by the Lie-group, prior, factor and solver code.
pub trait Real: RealField + Copy + FromPrimitive {
    /// Tolerance used when checking rotation matrices for orthonormality.
    fn orthonormal_tolerance() -> Self {
        let eps = Self::default_epsilon() * lit(1.0e3);
        let floor: Self = lit(1.0e-9);
        if eps > floor {
            eps
        } else {
            floor
        }
    }
}

impl<T: RealField + Copy + FromPrimitive> Real for T {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<S: Real>(x: f64) -> S {
    <S as FromPrimitive>::from_f64(x).expect("scalar conversion from f64")
}

/// Converts a working scalar into `f64`.
#[inline]
pub fn to_f64<S: Real>(x: S) -> f64 {
    nalgebra::try_convert::<S, f64>(x).unwrap_or(f64::NAN)
}

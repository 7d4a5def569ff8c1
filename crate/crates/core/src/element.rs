//! Floating-point element abstraction.
//!
//! All numeric code is generic over [`Element`] so the same kernels run in
//! f32 (default, training/inference) and f64 (gradient checking). `Scalar`
//! is the build-wide default precision.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Trait bound for tensor elements. Implemented for `f32` and `f64` only.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from an f64 literal.
    #[inline]
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Widening conversion for accumulation and reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("element convertible to f64")
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// Build-wide default precision: f32 unless the `f64` feature is enabled.
#[cfg(not(feature = "f64"))]
pub type Scalar = f32;

/// Build-wide default precision: f32 unless the `f64` feature is enabled.
#[cfg(feature = "f64")]
pub type Scalar = f64;

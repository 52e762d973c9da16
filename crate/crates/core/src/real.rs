//! Floating-point element type used by tensors and models.

use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FloatConst};

/// A floating-point scalar usable as a tensor element.
///
/// Implemented for `f64` (the default everywhere) and `f32`.
pub trait Real:
    Float + FloatConst + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Human-readable name, as stored in run configs.
    const NAME: &'static str;

    /// The Gauss error function.
    fn erf(self) -> Self;

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

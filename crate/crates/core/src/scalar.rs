//! Scalar abstraction for the tensor engine.
//!
//! The engine is generic over the floating-point type; the rest of the
//! crate uses the concrete f64 aliases exported from the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar usable inside tensors and tapes.
pub trait Scalar:
    Float + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from f64 (exact for f64 itself).
    fn from_f64(x: f64) -> Self;

    /// Lossy conversion to f64 (exact for f64 itself).
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

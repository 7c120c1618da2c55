use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type of a graph. Implemented for `f32` (training)
/// and `f64` (finite-difference check mode).
pub trait Real: num_traits::Float + Sum + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;

    fn from_f32(v: f32) -> Self {
        Self::from_f64(v as f64)
    }

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type of model parameters. Training runs in `f32`; `f64` exists for
/// gradient checking. Transcendentals go through `libm` so results do not
/// depend on the host's math library.
pub trait Real:
    Float + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn exp_det(self) -> Self;
    fn ln_det(self) -> Self;
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Real for f32 {
    fn exp_det(self) -> Self {
        libm::expf(self)
    }
    fn ln_det(self) -> Self {
        libm::logf(self)
    }
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn of_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn exp_det(self) -> Self {
        libm::exp(self)
    }
    fn ln_det(self) -> Self {
        libm::log(self)
    }
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn of_f32(v: f32) -> Self {
        f64::from(v)
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the networks.
///
/// Training runs in `f32`; the gradient oracle runs the same code in `f64`.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Subnormals become zero; they carry no useful signal here and make
    /// arithmetic on them orders of magnitude slower.
    fn flush(self) -> Self {
        if self.is_subnormal() {
            Self::zero()
        } else {
            self
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

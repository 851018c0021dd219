//! Floating point abstraction so every field operation runs in both binary32
//! and binary64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rustfft::FftNum;

pub trait Real:
    FftNum + Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Short precision tag, `"f32"` or `"f64"`.
    const NAME: &'static str;

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite float converts to f64")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Inner product accumulated in f64 regardless of the storage precision.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Real>(a: &[T]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.as_f64().abs()))
}

pub fn cast_vec<A: Real, B: Real>(v: &[A]) -> Vec<B> {
    v.iter().map(|x| B::of(x.as_f64())).collect()
}

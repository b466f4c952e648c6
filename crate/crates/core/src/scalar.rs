//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`], which bundles
//! the field/analytic operations from `nalgebra::RealField` with the
//! `num-traits` casts and the two random primitives we need. `f32` and `f64`
//! implement it; concrete aliases live at the crate root.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
// Serde bounds are intentionally NOT supertraits: a `DeserializeOwned`
// bound on `Real` itself would make every derive-generated `Deserialize`
// impl ambiguous. Persistence code adds explicit serde bounds instead.

pub trait Real:
    RealField
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for constants and tolerances.
    fn of(x: f64) -> Self;

    /// Value as `f64`, for reporting and file output.
    fn to_f64_lossy(self) -> f64;

    fn is_finite_scalar(self) -> bool;

    fn is_nan_scalar(self) -> bool;

    /// Standard normal draw.
    fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw from [0, 1). Implemented directly on the raw bit stream
    /// so the result does not depend on `rand`'s distribution internals.
    fn uniform_01<R: RngCore + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }

    #[inline]
    fn is_nan_scalar(self) -> bool {
        self.is_nan()
    }

    #[inline]
    fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform_01<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        // 53 high bits -> [0, 1) at full double precision.
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }

    #[inline]
    fn is_nan_scalar(self) -> bool {
        self.is_nan()
    }

    #[inline]
    fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform_01<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }
}

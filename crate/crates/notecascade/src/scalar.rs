//! Scalar abstraction for the numeric stages.
//!
//! Everything that computes with floating point (TF-IDF weights, the hinge
//! solver, metrics, cosine distances, cost estimates) is generic over
//! [`Scalar`] so the same code runs in `f32` or `f64`. The shipped pipeline
//! and CLI instantiate `f64`; see the aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable by every numeric stage.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + Sum<Self>
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` constants and counts.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to any Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

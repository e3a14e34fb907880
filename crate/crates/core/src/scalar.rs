use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the quantum engine and metrics are generic over: f32 or f64.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an f64 literal into this scalar.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    /// Tolerance used when checking normalization of states and distributions.
    fn norm_tol() -> Self;
}

impl Real for f32 {
    fn norm_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn norm_tol() -> Self {
        1e-9
    }
}

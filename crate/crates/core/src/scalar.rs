//! Scalar abstraction shared by the graph, engine and statistics code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Binary floating point usable as an edge weight or probability: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Log-likelihood weight `ln((1 - p) / p)` of an independent flip with probability `p`.
pub fn weight_of<W: Real>(p: W) -> W {
    ((W::one() - p) / p).ln()
}

//! Minimal reverse-mode automatic differentiation.
//!
//! Networks are built from a [`Tape`] that records every operation of one
//! forward pass. Learnable weights live in [`ParameterSet`]s; binding a set
//! to a tape creates leaf nodes for its entries, and after
//! [`Tape::backward`] the resulting [`Gradients`] are folded back into the
//! set with [`ParameterSet::accumulate`]. The tape is thrown away after each
//! pass.
//!
//! Everything is generic over [`Real`] so gradient checks can run at 64-bit
//! while training runs at 32-bit.

mod init;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub mod gradcheck;

pub use init::{fan_in_uniform, identity};
pub use optim::{Adam, AdamConfig};
pub use params::ParameterSet;
pub use tape::{BoundParams, Gradients, Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type usable on the tape.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

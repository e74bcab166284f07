//! Minimal differentiable-model substrate.
//!
//! Activations are 2-D arrays with one row per example (or per example and
//! spatial position) and one column per channel. Every layer exposes a
//! `forward` and a `backward`; backward takes the forward input, the upstream
//! gradient and a gradient [`ParamStore`] to accumulate into, and returns the
//! gradient with respect to the input.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use layers::{
    Activation, AttentionCache, AttentionPool, Conv2d, Dense, DepthwiseTemporal, Embedding,
    FeatureMap, L2Normalize, PositionalPool,
};
pub use loss::{nce_loss, softmax, softmax_xent, NceOutput};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

/// Floating-point element type of parameters and activations.
pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: Dtype;

    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

//! A small 1D convolutional classifier with hand-written backpropagation.
//!
//! Each block is conv -> batch norm -> ReLU -> max pool (size 2, stride 2).
//! Three blocks feed a global max pool and a dense layer with softmax.
//! Tensors are stored channel-major per sample (`[batch][channel][position]`)
//! in flat vectors. Parameters are `f32` by default; the same code runs in
//! `f64`, which the gradient checks use. Reductions (batch-norm statistics,
//! weight gradients, dense layer, loss) accumulate in `f64`.

use core::fmt::Debug;
use core::ops::{AddAssign, MulAssign, SubAssign};

#[allow(unused_imports)]
use num_traits::Float;

pub mod layers;
mod model;
mod train;

pub use model::{BlockTrace, ConvBlock, ForwardTrace, Gradients, Model, ModelArch};
pub use train::{evaluate, train, EpochStats, Optimizer, TrainConfig};

/// Floating point storage type for parameters and activations.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Batch norm behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize by batch statistics.
    Train,
    /// Normalize by running statistics.
    Eval,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
